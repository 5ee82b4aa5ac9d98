#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "repsnet/rng.hpp"
#include "repsnet/tensor.hpp"

// Central-difference gradient verification for test code. The forward callable
// must rebuild the whole graph from the given tape each invocation.

namespace repsnet {

struct GradCheckReport {
    double max_rel_err = 0.0;
    int coords_checked = 0;
};

// Compares analytic gradients of a scalar-loss forward pass against central
// finite differences. Large parameters are subsampled deterministically.
inline GradCheckReport check_gradients(const std::vector<Tensor>& params,
                                       const std::function<Tensor(Tape&)>& forward,
                                       double eps = 1e-5, int max_coords_per_param = 64,
                                       uint64_t seed = 17) {
    Tape tape(true);
    Tensor loss = forward(tape);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Tensor& p : params) analytic.push_back(p.impl()->grad);

    GradCheckReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        std::vector<double>& x = params[pi].impl()->data;
        std::vector<size_t> coords(x.size());
        std::iota(coords.begin(), coords.end(), size_t{0});
        if (static_cast<int>(coords.size()) > max_coords_per_param) {
            Rng rng(mix_seed(seed, static_cast<uint64_t>(pi)));
            rng.shuffle(coords);
            coords.resize(static_cast<size_t>(max_coords_per_param));
            std::sort(coords.begin(), coords.end());
        }
        for (size_t ci : coords) {
            const double saved = x[ci];
            x[ci] = saved + eps;
            Tape plus_tape(false);
            const double lp = forward(plus_tape).item();
            x[ci] = saved - eps;
            Tape minus_tape(false);
            const double lm = forward(minus_tape).item();
            x[ci] = saved;
            const double fd = (lp - lm) / (2.0 * eps);
            const double an = analytic[pi].empty() ? 0.0 : analytic[pi][ci];
            const double rel = std::fabs(fd - an) / std::max(1.0, std::max(std::fabs(fd), std::fabs(an)));
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.coords_checked;
        }
    }
    return report;
}

} // namespace repsnet
