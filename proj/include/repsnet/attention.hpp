#pragma once

#include <cmath>
#include <vector>

#include "repsnet/tensor.hpp"

// Masked scaled dot-product attention building blocks. Masks are additive
// biases of 0 / -1e9: after max-subtraction inside softmax, a -1e9 slot
// underflows to an exact 0 weight, so masking is bit-deterministic without
// infinities in the arithmetic.

namespace repsnet {

constexpr double kMaskValue = -1e9;

// Bias matrix broadcasting a key-side mask over n_query rows: 0 where the key
// participates, kMaskValue where it is masked out.
inline Tensor key_mask_bias(int n_query, const std::vector<int>& key_mask) {
    const int m = static_cast<int>(key_mask.size());
    std::vector<double> b(static_cast<size_t>(n_query) * m, 0.0);
    for (int i = 0; i < n_query; ++i)
        for (int j = 0; j < m; ++j)
            if (key_mask[static_cast<size_t>(j)] == 0) b[static_cast<size_t>(i) * m + j] = kMaskValue;
    return Tensor({n_query, m}, std::move(b));
}

// softmax(q k^T / sqrt(d_h) + bias) v. The bias tensor is optional.
inline Tensor scaled_dot_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                                   const Tensor* bias = nullptr) {
    if (q.cols() != k.cols() || k.rows() != v.rows()) {
        throw DimensionError("attention shape mismatch: q " + detail::shape_str(q.shape()) + ", k " +
                             detail::shape_str(k.shape()) + ", v " + detail::shape_str(v.shape()));
    }
    Tensor scores = scale(tape, matmul(tape, q, transpose(tape, k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
    if (bias) scores = add(tape, scores, *bias);
    return matmul(tape, softmax(tape, scores), v);
}

} // namespace repsnet
