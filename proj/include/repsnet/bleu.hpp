#pragma once

#include <array>
#include <cmath>
#include <cstdlib>
#include <map>
#include <vector>

#include "repsnet/errors.hpp"

// Sentence-level cumulative BLEU-1..4: geometric mean of clipped n-gram
// precisions times a brevity penalty against the closest reference length.
// Zero higher-order precisions are floored at a small epsilon whenever a
// lower-order precision is positive; otherwise the score is zero.

namespace repsnet {

constexpr double kBleuEpsilon = 1e-9;

namespace detail {

using Gram = std::vector<int>;

inline std::map<Gram, int> gram_counts(const std::vector<int>& seq, int n) {
    std::map<Gram, int> counts;
    for (size_t i = 0; i + static_cast<size_t>(n) <= seq.size(); ++i) {
        ++counts[Gram(seq.begin() + static_cast<std::ptrdiff_t>(i),
                      seq.begin() + static_cast<std::ptrdiff_t>(i + static_cast<size_t>(n)))];
    }
    return counts;
}

// clipped n-gram precision; -1 marks an undefined precision (no n-grams fit)
inline double clipped_precision(const std::vector<int>& hyp,
                                const std::vector<std::vector<int>>& refs, int n) {
    if (static_cast<int>(hyp.size()) < n) return -1.0;
    const std::map<Gram, int> hg = gram_counts(hyp, n);
    std::map<Gram, int> best_ref;
    for (const auto& ref : refs) {
        for (const auto& [gram, count] : gram_counts(ref, n)) {
            int& slot = best_ref[gram];
            slot = std::max(slot, count);
        }
    }
    int matched = 0, total = 0;
    for (const auto& [gram, count] : hg) {
        total += count;
        const auto it = best_ref.find(gram);
        if (it != best_ref.end()) matched += std::min(count, it->second);
    }
    return static_cast<double>(matched) / static_cast<double>(total);
}

// reference length closest to the hypothesis length, ties toward the shorter
inline int closest_ref_length(size_t hyp_len, const std::vector<std::vector<int>>& refs) {
    int best = static_cast<int>(refs.front().size());
    for (const auto& ref : refs) {
        const int len = static_cast<int>(ref.size());
        const long cur = std::labs(static_cast<long>(hyp_len) - len);
        const long old = std::labs(static_cast<long>(hyp_len) - best);
        if (cur < old || (cur == old && len < best)) best = len;
    }
    return best;
}

} // namespace detail

inline double bleu_n(const std::vector<int>& hyp, const std::vector<std::vector<int>>& refs, int n,
                     bool smooth = true) {
    if (n < 1 || n > 4) throw ContractError("bleu order must be between 1 and 4");
    if (refs.empty()) throw ContractError("bleu needs at least one reference");
    if (hyp.empty()) return 0.0;

    double log_sum = 0.0;
    bool any_positive = false;
    for (int i = 1; i <= n; ++i) {
        double p = detail::clipped_precision(hyp, refs, i);
        if (p <= 0.0) {
            if (!smooth || !any_positive) return 0.0;
            p = kBleuEpsilon;
        } else {
            any_positive = true;
        }
        log_sum += std::log(p);
    }
    const double geo_mean = std::exp(log_sum / static_cast<double>(n));

    const int r = detail::closest_ref_length(hyp.size(), refs);
    const double h = static_cast<double>(hyp.size());
    const double brevity = h >= static_cast<double>(r) ? 1.0 : std::exp(1.0 - static_cast<double>(r) / h);
    return geo_mean * brevity;
}

struct BleuReport {
    std::array<double, 4> mean = {0.0, 0.0, 0.0, 0.0};            // B1..B4 corpus means
    std::vector<std::array<double, 4>> per_sample;                // one row per pair
};

inline BleuReport corpus_eval(const std::vector<std::pair<std::vector<int>, std::vector<int>>>& pairs,
                              int n_max = 4) {
    if (pairs.empty()) throw ContractError("bleu corpus evaluation over an empty list");
    if (n_max < 1 || n_max > 4) throw ContractError("bleu order must be between 1 and 4");
    BleuReport report;
    for (const auto& [hyp, ref] : pairs) {
        std::array<double, 4> row = {0.0, 0.0, 0.0, 0.0};
        for (int n = 1; n <= n_max; ++n) {
            row[static_cast<size_t>(n) - 1] = bleu_n(hyp, {ref}, n);
            report.mean[static_cast<size_t>(n) - 1] += row[static_cast<size_t>(n) - 1];
        }
        report.per_sample.push_back(row);
    }
    for (double& m : report.mean) m /= static_cast<double>(pairs.size());
    return report;
}

} // namespace repsnet
