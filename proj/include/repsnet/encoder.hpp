#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "repsnet/attention.hpp"
#include "repsnet/data.hpp"
#include "repsnet/rng.hpp"
#include "repsnet/tensor.hpp"

// Visual/text encoding: patch-grid image encoder, bidirectional transformer
// text encoder, bilinear-attention fusion of image and question features, and
// bias-free projection heads into the shared embedding space.

namespace repsnet {

// --------------------------------------------------------------------------
// image augmentation
// --------------------------------------------------------------------------

// Scale to [0,1] and standardize with mean 0.5 / std 0.5 (so raw 128 maps to
// exactly 0); during training, with probability 1/2 a random rectangle of at
// most a quarter of the area is erased to the standardized mean.
inline ImageGrid augment_image(const ImageGrid& img, uint64_t seed, bool train) {
    ImageGrid out = img;
    for (double& v : out.pixels) v = (v / 256.0 - 0.5) / 0.5;
    if (!train) return out;
    Rng rng(seed);
    if (rng.uniform() >= 0.5) return out;
    const int max_h = std::max(1, img.height / 2);
    const int max_w = std::max(1, img.width / 2);
    const int rh = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_h)));
    const int rw = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_w)));
    const int top = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(img.height - rh + 1)));
    const int left = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(img.width - rw + 1)));
    for (int r = top; r < top + rh; ++r)
        for (int c = left; c < left + rw; ++c) out.pixels[static_cast<size_t>(r) * out.width + c] = 0.0;
    return out;
}

// --------------------------------------------------------------------------
// image encoder
// --------------------------------------------------------------------------

struct ImageEncoderParams {
    int patch_size = 4;
    Tensor w_patch; // (patch_size^2, d_x)
    Tensor b_patch; // (d_x)
    Tensor pos;     // (n_x, d_x)

    template <class F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + ".w_patch", w_patch);
        f(prefix + ".b_patch", b_patch);
        f(prefix + ".pos", pos);
    }
};

inline ImageEncoderParams make_image_encoder(Rng& rng, int patch_size, int n_x, int d_x, double init_std) {
    ImageEncoderParams p;
    p.patch_size = patch_size;
    p.w_patch = Tensor::randn({patch_size * patch_size, d_x}, rng, init_std);
    p.b_patch = Tensor::zeros({d_x}, true);
    p.pos = Tensor::randn({n_x, d_x}, rng, init_std);
    return p;
}

// Non-overlapping patches in row-major order, flattened, linearly projected,
// plus a learned per-position embedding. Row i of the output corresponds to
// patch i, preserving the spatial layout.
inline Tensor encode_image(Tape& tape, const ImageEncoderParams& p, const ImageGrid& img) {
    const int ps = p.patch_size;
    if (img.height % ps != 0 || img.width % ps != 0) {
        throw DimensionError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                             " not divisible by patch size " + std::to_string(ps));
    }
    const int rows = img.height / ps, cols = img.width / ps;
    const int n_x = rows * cols;
    if (n_x != p.pos.rows()) {
        throw DimensionError("patch count " + std::to_string(n_x) + " does not match position table of " +
                             std::to_string(p.pos.rows()));
    }
    std::vector<double> patches(static_cast<size_t>(n_x) * ps * ps);
    for (int pr = 0; pr < rows; ++pr)
        for (int pc = 0; pc < cols; ++pc) {
            const size_t base = (static_cast<size_t>(pr) * cols + pc) * ps * ps;
            for (int r = 0; r < ps; ++r)
                for (int c = 0; c < ps; ++c)
                    patches[base + static_cast<size_t>(r) * ps + c] = img.at(pr * ps + r, pc * ps + c);
        }
    Tensor patch_mat({n_x, ps * ps}, std::move(patches));
    Tensor projected = add_row_vector(tape, matmul(tape, patch_mat, p.w_patch), p.b_patch);
    return add(tape, projected, p.pos);
}

// --------------------------------------------------------------------------
// text encoder
// --------------------------------------------------------------------------

struct TextLayerParams {
    std::vector<Tensor> wq, wk, wv; // per head, (d_q, d_head)
    Tensor wo;                      // (d_q, d_q)
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;

    template <class F>
    void for_each(const std::string& prefix, F&& f) {
        for (size_t h = 0; h < wq.size(); ++h) {
            const std::string hp = prefix + ".h" + std::to_string(h);
            f(hp + ".wq", wq[h]);
            f(hp + ".wk", wk[h]);
            f(hp + ".wv", wv[h]);
        }
        f(prefix + ".wo", wo);
        f(prefix + ".ln1_g", ln1_g);
        f(prefix + ".ln1_b", ln1_b);
        f(prefix + ".ln2_g", ln2_g);
        f(prefix + ".ln2_b", ln2_b);
        f(prefix + ".mlp_w1", mlp_w1);
        f(prefix + ".mlp_b1", mlp_b1);
        f(prefix + ".mlp_w2", mlp_w2);
        f(prefix + ".mlp_b2", mlp_b2);
    }
};

struct TextEncoderParams {
    int n_heads = 2;
    Tensor tok_emb; // (vocab, d_q)
    Tensor pos_emb; // (max_len, d_q)
    std::vector<TextLayerParams> layers;
    Tensor final_g, final_b;

    template <class F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + ".tok_emb", tok_emb);
        f(prefix + ".pos_emb", pos_emb);
        for (size_t l = 0; l < layers.size(); ++l) layers[l].for_each(prefix + ".l" + std::to_string(l), f);
        f(prefix + ".final_g", final_g);
        f(prefix + ".final_b", final_b);
    }
};

inline TextLayerParams make_text_layer(Rng& rng, int d_model, int n_heads, double init_std) {
    if (d_model % n_heads != 0) throw ContractError("model width must divide evenly across heads");
    const int d_head = d_model / n_heads;
    TextLayerParams l;
    for (int h = 0; h < n_heads; ++h) {
        l.wq.push_back(Tensor::randn({d_model, d_head}, rng, init_std));
        l.wk.push_back(Tensor::randn({d_model, d_head}, rng, init_std));
        l.wv.push_back(Tensor::randn({d_model, d_head}, rng, init_std));
    }
    l.wo = Tensor::randn({d_model, d_model}, rng, init_std);
    l.ln1_g = Tensor::full({d_model}, 1.0, true);
    l.ln1_b = Tensor::zeros({d_model}, true);
    l.ln2_g = Tensor::full({d_model}, 1.0, true);
    l.ln2_b = Tensor::zeros({d_model}, true);
    l.mlp_w1 = Tensor::randn({d_model, 4 * d_model}, rng, init_std);
    l.mlp_b1 = Tensor::zeros({4 * d_model}, true);
    l.mlp_w2 = Tensor::randn({4 * d_model, d_model}, rng, init_std);
    l.mlp_b2 = Tensor::zeros({d_model}, true);
    return l;
}

inline TextEncoderParams make_text_encoder(Rng& rng, int vocab_size, int d_model, int n_heads,
                                           int n_layers, int max_len, double init_std) {
    TextEncoderParams p;
    p.n_heads = n_heads;
    p.tok_emb = Tensor::randn({vocab_size, d_model}, rng, init_std);
    p.pos_emb = Tensor::randn({max_len, d_model}, rng, init_std);
    for (int l = 0; l < n_layers; ++l) p.layers.push_back(make_text_layer(rng, d_model, n_heads, init_std));
    p.final_g = Tensor::full({d_model}, 1.0, true);
    p.final_b = Tensor::zeros({d_model}, true);
    return p;
}

namespace detail {

inline Tensor multi_head_block(Tape& tape, const TextLayerParams& l, const Tensor& x_q,
                               const Tensor& x_kv, const Tensor* bias) {
    std::vector<Tensor> heads;
    for (size_t h = 0; h < l.wq.size(); ++h) {
        Tensor q = matmul(tape, x_q, l.wq[h]);
        Tensor k = matmul(tape, x_kv, l.wk[h]);
        Tensor v = matmul(tape, x_kv, l.wv[h]);
        heads.push_back(scaled_dot_attention(tape, q, k, v, bias));
    }
    return matmul(tape, concat_cols(tape, heads), l.wo);
}

inline Tensor mlp_block(Tape& tape, const TextLayerParams& l, const Tensor& x) {
    Tensor h = gelu(tape, add_row_vector(tape, matmul(tape, x, l.mlp_w1), l.mlp_b1));
    return add_row_vector(tape, matmul(tape, h, l.mlp_w2), l.mlp_b2);
}

} // namespace detail

// Pre-norm bidirectional transformer over the token sequence. The attention
// mask is derived from the ids themselves: PAD positions are invisible as
// keys, so their embeddings cannot leak into other positions.
inline Tensor encode_text(Tape& tape, const TextEncoderParams& p, const std::vector<int>& ids) {
    const int n = static_cast<int>(ids.size());
    if (n == 0) throw ContractError("encode_text on an empty sequence");
    if (n > p.pos_emb.rows()) {
        throw ContractError("sequence of " + std::to_string(n) + " tokens exceeds the position table of " +
                            std::to_string(p.pos_emb.rows()));
    }
    std::vector<int> positions(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = i;
    std::vector<int> mask(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) mask[static_cast<size_t>(i)] = ids[static_cast<size_t>(i)] != Vocab::kPad ? 1 : 0;
    Tensor bias = key_mask_bias(n, mask);

    Tensor x = add(tape, embedding_rows(tape, p.tok_emb, ids), embedding_rows(tape, p.pos_emb, positions));
    for (const TextLayerParams& l : p.layers) {
        Tensor ln1 = layer_norm(tape, x, l.ln1_g, l.ln1_b);
        x = add(tape, x, detail::multi_head_block(tape, l, ln1, ln1, &bias));
        Tensor ln2 = layer_norm(tape, x, l.ln2_g, l.ln2_b);
        x = add(tape, x, detail::mlp_block(tape, l, ln2));
    }
    return layer_norm(tape, x, p.final_g, p.final_b);
}

// --------------------------------------------------------------------------
// bilinear attention fusion
// --------------------------------------------------------------------------

struct BanGlimpseParams {
    Tensor u; // (d_x, rank)
    Tensor v; // (d_q, rank)
    Tensor w; // (rank, d_x)

    template <class F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + ".u", u);
        f(prefix + ".v", v);
        f(prefix + ".w", w);
    }
};

struct BanParams {
    std::vector<BanGlimpseParams> glimpses;

    template <class F>
    void for_each(const std::string& prefix, F&& f) {
        for (size_t g = 0; g < glimpses.size(); ++g) glimpses[g].for_each(prefix + ".g" + std::to_string(g), f);
    }
};

inline BanParams make_ban(Rng& rng, int d_x, int d_q, int rank, int glimpses, double init_std) {
    if (glimpses < 1) throw ContractError("fusion needs at least one glimpse");
    BanParams p;
    for (int g = 0; g < glimpses; ++g) {
        BanGlimpseParams gp;
        gp.u = Tensor::randn({d_x, rank}, rng, init_std);
        gp.v = Tensor::randn({d_q, rank}, rng, init_std);
        gp.w = Tensor::randn({rank, d_x}, rng, init_std);
        p.glimpses.push_back(std::move(gp));
    }
    return p;
}

// Low-rank bilinear attention with residual accumulation: per glimpse,
// logits (X U)(Q V)^T / sqrt(rank) are softmaxed over question positions
// (PAD-masked) and the attended projected question context is folded back
// into the image features.
inline Tensor ban_fuse(Tape& tape, const BanParams& p, const Tensor& x, const Tensor& q,
                       const std::vector<int>& q_mask) {
    if (static_cast<int>(q_mask.size()) != q.rows()) {
        throw DimensionError("question mask length does not match question rows");
    }
    bool any = false;
    for (int m : q_mask) any = any || m != 0;
    if (!any) throw ContractError("fusion over an all-PAD question");
    const int rank = p.glimpses.front().u.cols();
    Tensor bias = key_mask_bias(x.rows(), q_mask);
    Tensor fused = x;
    for (const BanGlimpseParams& g : p.glimpses) {
        Tensor xu = matmul(tape, fused, g.u);                       // n_x x r
        Tensor qv = matmul(tape, q, g.v);                           // n_q x r
        Tensor logits = scale(tape, matmul(tape, xu, transpose(tape, qv)), 1.0 / std::sqrt(static_cast<double>(rank)));
        Tensor attn = softmax(tape, add(tape, logits, bias));       // rows over question axis
        Tensor pooled = matmul(tape, matmul(tape, attn, qv), g.w);  // n_x x d_x
        fused = add(tape, fused, pooled);
    }
    return fused;
}

// --------------------------------------------------------------------------
// projection to the shared space
// --------------------------------------------------------------------------

struct ProjectionParams {
    Tensor w; // (d_in, d), bias-free

    template <class F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + ".w", w);
    }
};

inline ProjectionParams make_projection(Rng& rng, int d_in, int d, double init_std) {
    ProjectionParams p;
    p.w = Tensor::randn({d_in, d}, rng, init_std);
    return p;
}

// Mean-pool over non-PAD rows, bias-free linear map, L2 normalize. Bias-free
// keeps the output invariant to positive rescaling of the input features.
inline Tensor project_embed(Tape& tape, const ProjectionParams& p, const Tensor& feats,
                            const std::vector<int>* row_mask = nullptr) {
    Tensor pooled = mean_rows(tape, feats, row_mask);
    Tensor mapped = reshape(tape, matmul(tape, reshape(tape, pooled, {1, feats.cols()}), p.w), {p.w.cols()});
    return l2_normalize(tape, mapped);
}

} // namespace repsnet
