#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "repsnet/errors.hpp"
#include "repsnet/tensor.hpp"

// AdamW with decoupled weight decay: the multiplicative decay applies to the
// parameter before the moment-based update, so decay never leaks into the
// moment estimates.

namespace repsnet {

struct AdamWConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class AdamW {
  public:
    explicit AdamW(std::vector<Tensor> params, AdamWConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        for (const Tensor& p : params_) {
            if (!p.requires_grad()) throw ContractError("optimizer parameter does not require grad");
            m_.emplace_back(static_cast<size_t>(p.size()), 0.0);
            v_.emplace_back(static_cast<size_t>(p.size()), 0.0);
        }
    }

    int64_t step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    size_t param_count() const { return params_.size(); }

    // One update from the gradients accumulated on `tape`. A parameter that
    // never touched this tape contributes a zero gradient (its buffer may be
    // stale from an earlier tape, so the tape id is the source of truth).
    void step(const Tape& tape) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            detail::TensorData* d = params_[pi].impl();
            const bool on_tape = d->tape_id == tape.id() && d->grad.size() == d->data.size();
            std::vector<double>& m = m_[pi];
            std::vector<double>& v = v_[pi];
            for (size_t i = 0; i < d->data.size(); ++i) {
                const double g = on_tape ? d->grad[i] : 0.0;
                if (cfg_.weight_decay != 0.0) d->data[i] *= 1.0 - cfg_.lr * cfg_.weight_decay;
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                d->data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                if (!std::isfinite(d->data[i])) throw NumericError("optimizer produced a non-finite parameter");
            }
        }
    }

  private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    AdamWConfig cfg_;
    int64_t t_ = 0;
};

} // namespace repsnet
