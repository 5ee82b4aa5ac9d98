#pragma once

#include <cmath>
#include <vector>

#include "repsnet/tensor.hpp"

// Bidirectional InfoNCE alignment of the projected image(+question) and text
// embeddings: each pairing in the batch is the positive against all in-batch
// negatives, in both directions.

namespace repsnet {

struct ContrastiveConfig {
    double temperature = 0.07;
    double alpha = 1.0;
};

inline double cosine_sim(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.cols() != b.cols()) {
        throw DimensionError("cosine similarity needs two equal-length vectors");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int i = 0; i < a.cols(); ++i) {
        dot += a(i) * b(i);
        na += a(i) * a(i);
        nb += b(i) * b(i);
    }
    if (na == 0.0 || nb == 0.0) throw ContractError("cosine similarity with a zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace detail {

// Diagonal-target cross entropy over a similarity matrix scaled by 1/tau,
// averaged over rows. Factored out so similarity-level properties are testable
// directly.
inline Tensor nce_from_sims(Tape& tape, const Tensor& sims, double temperature) {
    if (temperature <= 0.0) throw ContractError("temperature must be positive");
    if (sims.rank() != 2 || sims.rows() != sims.cols()) {
        throw DimensionError("similarity matrix must be square");
    }
    const int n = sims.rows();
    std::vector<int> diag(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) diag[static_cast<size_t>(i)] = i;
    Tensor ce = cross_entropy_sum(tape, scale(tape, sims, 1.0 / temperature), diag);
    return scale(tape, ce, 1.0 / static_cast<double>(n));
}

} // namespace detail

// One direction of the batch loss: row i of `a` scored against every row of
// `b`, positive on the diagonal.
inline Tensor info_nce_directional(Tape& tape, const Tensor& a, const Tensor& b, double temperature) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape() != b.shape()) {
        throw DimensionError("paired embedding matrices must share their shape");
    }
    return detail::nce_from_sims(tape, matmul(tape, a, transpose(tape, b)), temperature);
}

// Weighted sum of both directions. Swapping the inputs leaves the value
// bit-identical: the swapped similarity matrix is the transpose, and each
// direction's row reductions become the other's.
inline Tensor encoder_loss(Tape& tape, const Tensor& image_emb, const Tensor& text_emb,
                           const ContrastiveConfig& cfg) {
    if (cfg.alpha <= 0.0) throw ContractError("contrastive weight must be positive");
    Tensor forward_dir = info_nce_directional(tape, image_emb, text_emb, cfg.temperature);
    Tensor backward_dir = info_nce_directional(tape, text_emb, image_emb, cfg.temperature);
    return scale(tape, add(tape, forward_dir, backward_dir), cfg.alpha);
}

} // namespace repsnet
