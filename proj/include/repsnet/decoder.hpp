#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "repsnet/attention.hpp"
#include "repsnet/rng.hpp"
#include "repsnet/tensor.hpp"
#include "repsnet/vocab.hpp"

// Autoregressive transformer decoder whose attention keys/values concatenate
// the token stream with image and prior-context features: queries come from
// the token states only, conditioning rows are visible at every position, and
// the causal mask applies just to the token-token sub-block.

namespace repsnet {

struct DecoderConfig {
    int layers = 2;
    int heads = 2;
    int width = 64;   // D, total across heads
    int max_len = 200;
    int vocab_size = 0;
    int d_x = 32;     // image feature width
    int d_c = 64;     // context feature width (defaults to D: contexts are embedded tokens)

    void validate() const {
        if (layers < 1 || heads < 1) throw ContractError("decoder needs at least one layer and head");
        if (width % heads != 0) throw ContractError("decoder width must divide across heads");
        if (max_len < 5) throw ContractError("decoder max length must allow the minimum sequence length");
        if (vocab_size < 4) throw ContractError("decoder vocabulary must include the specials");
    }
};

struct DecoderHeadParams {
    Tensor wqy, wky, wvy; // (D, d_head): token stream
    Tensor wkx, wvx;      // (d_x, d_head): image stream
    Tensor wkc, wvc;      // (d_c, d_head): prior-context stream

    template <class F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + ".wqy", wqy);
        f(prefix + ".wky", wky);
        f(prefix + ".wvy", wvy);
        f(prefix + ".wkx", wkx);
        f(prefix + ".wvx", wvx);
        f(prefix + ".wkc", wkc);
        f(prefix + ".wvc", wvc);
    }
};

struct DecoderBlockParams {
    std::vector<DecoderHeadParams> heads;
    Tensor wo; // (D, D)
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;

    template <class F>
    void for_each(const std::string& prefix, F&& f) {
        for (size_t h = 0; h < heads.size(); ++h) heads[h].for_each(prefix + ".h" + std::to_string(h), f);
        f(prefix + ".wo", wo);
        f(prefix + ".ln1_g", ln1_g);
        f(prefix + ".ln1_b", ln1_b);
        f(prefix + ".ln2_g", ln2_g);
        f(prefix + ".ln2_b", ln2_b);
        f(prefix + ".ff_w1", ff_w1);
        f(prefix + ".ff_b1", ff_b1);
        f(prefix + ".ff_w2", ff_w2);
        f(prefix + ".ff_b2", ff_b2);
    }
};

struct DecoderParams {
    DecoderConfig cfg;
    Tensor tok_emb; // (vocab, D)
    Tensor pos_emb; // (max_len, D)
    std::vector<DecoderBlockParams> blocks;
    Tensor final_g, final_b;
    Tensor w_out; // (D, vocab)
    Tensor b_out; // (vocab)

    template <class F>
    void for_each(const std::string& prefix, F&& f) {
        f(prefix + ".tok_emb", tok_emb);
        f(prefix + ".pos_emb", pos_emb);
        for (size_t b = 0; b < blocks.size(); ++b) blocks[b].for_each(prefix + ".b" + std::to_string(b), f);
        f(prefix + ".final_g", final_g);
        f(prefix + ".final_b", final_b);
        f(prefix + ".w_out", w_out);
        f(prefix + ".b_out", b_out);
    }
};

inline DecoderParams make_decoder(Rng& rng, const DecoderConfig& cfg, double init_std) {
    cfg.validate();
    const int dh = cfg.width / cfg.heads;
    DecoderParams p;
    p.cfg = cfg;
    p.tok_emb = Tensor::randn({cfg.vocab_size, cfg.width}, rng, init_std);
    p.pos_emb = Tensor::randn({cfg.max_len, cfg.width}, rng, init_std);
    for (int b = 0; b < cfg.layers; ++b) {
        DecoderBlockParams blk;
        for (int h = 0; h < cfg.heads; ++h) {
            DecoderHeadParams hp;
            hp.wqy = Tensor::randn({cfg.width, dh}, rng, init_std);
            hp.wky = Tensor::randn({cfg.width, dh}, rng, init_std);
            hp.wvy = Tensor::randn({cfg.width, dh}, rng, init_std);
            hp.wkx = Tensor::randn({cfg.d_x, dh}, rng, init_std);
            hp.wvx = Tensor::randn({cfg.d_x, dh}, rng, init_std);
            hp.wkc = Tensor::randn({cfg.d_c, dh}, rng, init_std);
            hp.wvc = Tensor::randn({cfg.d_c, dh}, rng, init_std);
            blk.heads.push_back(std::move(hp));
        }
        blk.wo = Tensor::randn({cfg.width, cfg.width}, rng, init_std);
        blk.ln1_g = Tensor::full({cfg.width}, 1.0, true);
        blk.ln1_b = Tensor::zeros({cfg.width}, true);
        blk.ln2_g = Tensor::full({cfg.width}, 1.0, true);
        blk.ln2_b = Tensor::zeros({cfg.width}, true);
        blk.ff_w1 = Tensor::randn({cfg.width, 4 * cfg.width}, rng, init_std);
        blk.ff_b1 = Tensor::zeros({4 * cfg.width}, true);
        blk.ff_w2 = Tensor::randn({4 * cfg.width, cfg.width}, rng, init_std);
        blk.ff_b2 = Tensor::zeros({cfg.width}, true);
        p.blocks.push_back(std::move(blk));
    }
    p.final_g = Tensor::full({cfg.width}, 1.0, true);
    p.final_b = Tensor::zeros({cfg.width}, true);
    p.w_out = Tensor::randn({cfg.width, cfg.vocab_size}, rng, init_std);
    p.b_out = Tensor::zeros({cfg.vocab_size}, true);
    return p;
}

namespace detail {

inline bool all_zero(const Tensor& t) {
    for (double v : t.data()) {
        if (v != 0.0) return false;
    }
    return true;
}

} // namespace detail

// Per-head multimodal attention over [token rows; image rows; context rows].
// A conditioning stream whose key AND value projections are entirely zero is
// treated as absent: its rows are mask-biased out, which makes zero matrices
// an exact stream-disable switch.
inline Tensor multimodal_attention(Tape& tape, const DecoderBlockParams& blk, const Tensor& y,
                                   const Tensor* x_feats, const Tensor* c_feats) {
    const int n_y = y.rows();
    std::vector<Tensor> head_outs;
    for (const DecoderHeadParams& h : blk.heads) {
        Tensor q = matmul(tape, y, h.wqy);
        std::vector<Tensor> keys = {matmul(tape, y, h.wky)};
        std::vector<Tensor> vals = {matmul(tape, y, h.wvy)};
        std::vector<bool> stream_disabled;
        if (x_feats) {
            keys.push_back(matmul(tape, *x_feats, h.wkx));
            vals.push_back(matmul(tape, *x_feats, h.wvx));
            stream_disabled.push_back(detail::all_zero(h.wkx) && detail::all_zero(h.wvx));
        }
        if (c_feats) {
            keys.push_back(matmul(tape, *c_feats, h.wkc));
            vals.push_back(matmul(tape, *c_feats, h.wvc));
            stream_disabled.push_back(detail::all_zero(h.wkc) && detail::all_zero(h.wvc));
        }
        Tensor k = keys.size() > 1 ? concat_rows(tape, keys) : keys[0];
        Tensor v = vals.size() > 1 ? concat_rows(tape, vals) : vals[0];

        // causal over the token block, open (or disabled) over conditioning rows
        std::vector<double> bias(static_cast<size_t>(n_y) * k.rows(), 0.0);
        for (int i = 0; i < n_y; ++i)
            for (int j = i + 1; j < n_y; ++j) bias[static_cast<size_t>(i) * k.rows() + j] = kMaskValue;
        int offset = n_y;
        size_t stream = 0;
        for (const Tensor* feats : {x_feats, c_feats}) {
            if (!feats) continue;
            if (stream_disabled[stream]) {
                for (int i = 0; i < n_y; ++i)
                    for (int j = 0; j < feats->rows(); ++j)
                        bias[static_cast<size_t>(i) * k.rows() + offset + j] = kMaskValue;
            }
            offset += feats->rows();
            ++stream;
        }
        Tensor bias_t({n_y, k.rows()}, std::move(bias));
        head_outs.push_back(scaled_dot_attention(tape, q, k, v, &bias_t));
    }
    Tensor merged = head_outs.size() > 1 ? concat_cols(tape, head_outs) : head_outs[0];
    return matmul(tape, merged, blk.wo);
}

// Embeds context token ids with the decoder's own token+position tables; the
// result conditions generation as the prior-context stream.
inline Tensor embed_context(Tape& tape, const DecoderParams& p, const std::vector<int>& ids) {
    if (ids.empty()) throw ContractError("cannot embed an empty context");
    if (static_cast<int>(ids.size()) > p.cfg.max_len) {
        throw ContractError("context of " + std::to_string(ids.size()) + " tokens exceeds max length " +
                            std::to_string(p.cfg.max_len));
    }
    std::vector<int> positions(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
    return add(tape, embedding_rows(tape, p.tok_emb, ids), embedding_rows(tape, p.pos_emb, positions));
}

inline Tensor decoder_forward(Tape& tape, const DecoderParams& p, const std::vector<int>& ids,
                              const Tensor* x_feats, const Tensor* c_feats) {
    const int n = static_cast<int>(ids.size());
    if (n == 0) throw ContractError("decoder forward on an empty sequence");
    if (ids[0] != Vocab::kBos) throw ContractError("decoder input must start with BOS");
    if (n > p.cfg.max_len) {
        throw ContractError("sequence of " + std::to_string(n) + " tokens exceeds max length " +
                            std::to_string(p.cfg.max_len));
    }
    std::vector<int> positions(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) positions[static_cast<size_t>(i)] = i;
    Tensor y = add(tape, embedding_rows(tape, p.tok_emb, ids), embedding_rows(tape, p.pos_emb, positions));
    for (const DecoderBlockParams& blk : p.blocks) {
        Tensor ln1 = layer_norm(tape, y, blk.ln1_g, blk.ln1_b);
        y = add(tape, y, multimodal_attention(tape, blk, ln1, x_feats, c_feats));
        Tensor ln2 = layer_norm(tape, y, blk.ln2_g, blk.ln2_b);
        Tensor ff = gelu(tape, add_row_vector(tape, matmul(tape, ln2, blk.ff_w1), blk.ff_b1));
        y = add(tape, y, add_row_vector(tape, matmul(tape, ff, blk.ff_w2), blk.ff_b2));
    }
    Tensor final = layer_norm(tape, y, p.final_g, p.final_b);
    return add_row_vector(tape, matmul(tape, final, p.w_out), p.b_out);
}

struct SequenceLossParts {
    Tensor sum;    // scalar: summed cross-entropy over counted positions
    int count = 0; // non-PAD target positions
};

// Teacher forcing: logits at position t-1 predict token t; PAD targets are
// excluded. Returns the sum and count so batches can average globally.
inline SequenceLossParts sequence_loss_parts(Tape& tape, const DecoderParams& p, const std::vector<int>& ids,
                                             const Tensor* x_feats, const Tensor* c_feats) {
    if (ids.size() < 2) throw ContractError("teacher forcing needs at least BOS plus one target");
    Tensor logits = decoder_forward(tape, p, ids, x_feats, c_feats);
    const int n = static_cast<int>(ids.size());
    std::vector<int> targets(static_cast<size_t>(n) - 1);
    std::vector<int> mask(static_cast<size_t>(n) - 1);
    SequenceLossParts parts;
    for (int t = 1; t < n; ++t) {
        targets[static_cast<size_t>(t) - 1] = ids[static_cast<size_t>(t)];
        const int m = ids[static_cast<size_t>(t)] != Vocab::kPad ? 1 : 0;
        mask[static_cast<size_t>(t) - 1] = m;
        parts.count += m;
    }
    if (parts.count == 0) throw ContractError("teacher forcing with no non-PAD targets");
    // logits rows 0..n-2 predict targets 1..n-1
    Tensor sliced = embedding_rows(tape, logits, [&] {
        std::vector<int> rows(static_cast<size_t>(n) - 1);
        for (int i = 0; i + 1 < n; ++i) rows[static_cast<size_t>(i)] = i;
        return rows;
    }());
    parts.sum = cross_entropy_sum(tape, sliced, targets, &mask);
    return parts;
}

inline Tensor teacher_forced_loss(Tape& tape, const DecoderParams& p, const std::vector<int>& ids,
                                  const Tensor* x_feats, const Tensor* c_feats) {
    SequenceLossParts parts = sequence_loss_parts(tape, p, ids, x_feats, c_feats);
    return scale(tape, parts.sum, 1.0 / static_cast<double>(parts.count));
}

// --------------------------------------------------------------------------
// constrained generation
// --------------------------------------------------------------------------

struct GenerationConstraints {
    int min_len = 5;         // tokens that must precede EOS
    int no_repeat_ngram = 2; // 0 disables the repeat mask
    int max_tokens = 200;    // total sequence length cap, BOS included
    int beam = 1;

    void validate() const {
        if (min_len < 0 || no_repeat_ngram < 0) throw ContractError("generation constraints must be non-negative");
        if (min_len >= max_tokens) throw ContractError("minimum length must stay below the token cap");
        if (beam < 1) throw ContractError("beam width must be at least 1");
    }
};

// Scores the next token given the prefix; generation is written against this
// signature so tests can drive it with hand-built distributions.
using StepFn = std::function<std::vector<double>(const std::vector<int>&)>;

namespace detail {

// Marks tokens banned by the min-length and no-repeat-n-gram constraints.
inline std::vector<bool> banned_tokens(const std::vector<int>& prefix, int vocab_size,
                                       const GenerationConstraints& cons) {
    std::vector<bool> banned(static_cast<size_t>(vocab_size), false);
    const int generated = static_cast<int>(prefix.size()) - 1; // excludes BOS
    if (generated < cons.min_len) banned[static_cast<size_t>(Vocab::kEos)] = true;
    const int g = cons.no_repeat_ngram;
    if (g >= 1 && static_cast<int>(prefix.size()) >= g) {
        // ban t when (prefix tail of g-1 tokens) + t matches an existing g-gram
        std::set<std::vector<int>> grams;
        for (size_t i = 0; i + static_cast<size_t>(g) <= prefix.size(); ++i) {
            grams.insert(std::vector<int>(prefix.begin() + static_cast<std::ptrdiff_t>(i),
                                          prefix.begin() + static_cast<std::ptrdiff_t>(i + static_cast<size_t>(g))));
        }
        std::vector<int> candidate(prefix.end() - (g - 1), prefix.end());
        candidate.push_back(0);
        for (int t = 0; t < vocab_size; ++t) {
            candidate.back() = t;
            if (grams.count(candidate)) banned[static_cast<size_t>(t)] = true;
        }
    }
    return banned;
}

inline std::vector<double> log_softmax(const std::vector<double>& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : logits) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

} // namespace detail

// Greedy decoding under the generation constraints. Returns the sequence
// including the leading BOS and, when reached, the trailing EOS. Ties pick
// the lowest token id.
inline std::vector<int> greedy_decode(const StepFn& step, const GenerationConstraints& cons) {
    cons.validate();
    std::vector<int> seq = {Vocab::kBos};
    while (static_cast<int>(seq.size()) < cons.max_tokens) {
        const std::vector<double> logits = step(seq);
        const std::vector<bool> banned = detail::banned_tokens(seq, static_cast<int>(logits.size()), cons);
        int best = -1;
        for (int t = 0; t < static_cast<int>(logits.size()); ++t) {
            if (banned[static_cast<size_t>(t)]) continue;
            if (best < 0 || logits[static_cast<size_t>(t)] > logits[static_cast<size_t>(best)]) best = t;
        }
        if (best < 0) throw ContractError("generation constraints banned every token");
        seq.push_back(best);
        if (best == Vocab::kEos) break;
    }
    return seq;
}

// Length-normalized beam search (normalization exponent 1.0) under the same
// constraint masks. Beam width 1 reproduces greedy decoding exactly.
inline std::vector<int> beam_decode(const StepFn& step, const GenerationConstraints& cons) {
    cons.validate();
    if (cons.beam == 1) return greedy_decode(step, cons);

    struct Hyp {
        std::vector<int> seq;
        double score = 0.0; // cumulative log-probability
        bool done = false;
    };
    std::vector<Hyp> beams = {Hyp{{Vocab::kBos}, 0.0, false}};
    std::vector<Hyp> finished;

    for (int step_i = 1; step_i < cons.max_tokens; ++step_i) {
        // candidate: (negated score, token, source beam) for deterministic order
        struct Cand {
            double score;
            int token;
            size_t hyp;
        };
        std::vector<Cand> cands;
        for (size_t b = 0; b < beams.size(); ++b) {
            if (beams[b].done) continue;
            const std::vector<double> logits = step(beams[b].seq);
            const std::vector<double> logp = detail::log_softmax(logits);
            const std::vector<bool> banned = detail::banned_tokens(beams[b].seq, static_cast<int>(logits.size()), cons);
            for (int t = 0; t < static_cast<int>(logits.size()); ++t) {
                if (banned[static_cast<size_t>(t)]) continue;
                cands.push_back({beams[b].score + logp[static_cast<size_t>(t)], t, b});
            }
        }
        if (cands.empty()) {
            if (finished.empty()) throw ContractError("generation constraints banned every token");
            break;
        }
        std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.token != b.token) return a.token < b.token;
            return a.hyp < b.hyp;
        });
        std::vector<Hyp> next;
        for (const Cand& c : cands) {
            if (static_cast<int>(next.size()) >= cons.beam) break;
            Hyp h = beams[c.hyp];
            h.seq.push_back(c.token);
            h.score = c.score;
            if (c.token == Vocab::kEos) {
                h.done = true;
                finished.push_back(h);
            } else {
                next.push_back(std::move(h));
            }
        }
        if (next.empty()) break;
        beams = std::move(next);
    }
    for (Hyp& h : beams) {
        if (!h.done) finished.push_back(h); // ran out of budget without EOS
    }
    // pick by score / generated-length (exponent 1.0); exact ties fall back to
    // the lexicographically smaller sequence
    const Hyp* best = nullptr;
    double best_norm = -std::numeric_limits<double>::infinity();
    for (const Hyp& h : finished) {
        const double len = static_cast<double>(h.seq.size() - 1);
        const double norm = h.score / std::max(1.0, len);
        if (best == nullptr || norm > best_norm || (norm == best_norm && h.seq < best->seq)) {
            best = &h;
            best_norm = norm;
        }
    }
    return best->seq;
}

} // namespace repsnet
