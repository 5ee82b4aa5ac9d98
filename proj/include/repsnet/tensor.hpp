#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "repsnet/errors.hpp"
#include "repsnet/rng.hpp"

// Dense 64-bit float tensors with define-by-run reverse-mode autodiff.
// Kernels are plain loops with a fixed left-to-right reduction order, so the
// same seed and op sequence produce bit-identical buffers on every run and
// platform. Overflow to Inf/NaN raises NumericError at the op boundary
// instead of propagating silently.

namespace repsnet {

class Tape;

namespace detail {

struct TensorData {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;     // same length as data once registered on a tape
    bool requires_grad = false;
    uint64_t tape_id = 0;         // tape this node currently belongs to
    int node_id = -1;
};

inline int64_t numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

} // namespace detail

// Value-semantics handle over shared storage. Tensors are immutable after
// creation except through optimizer steps.
class Tensor {
  public:
    Tensor() = default;

    Tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad = false) {
        for (int e : shape) {
            if (e <= 0) throw DimensionError("tensor extents must be positive, got " + detail::shape_str(shape));
        }
        if (detail::numel(shape) != static_cast<int64_t>(values.size())) {
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + detail::shape_str(shape));
        }
        d_ = std::make_shared<detail::TensorData>();
        d_->shape = std::move(shape);
        d_->data = std::move(values);
        d_->requires_grad = requires_grad;
    }

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        std::vector<double> v(static_cast<size_t>(detail::numel(shape)), 0.0);
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false) {
        std::vector<double> v(static_cast<size_t>(detail::numel(shape)), value);
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    // Gaussian init, the standard parameter constructor.
    static Tensor randn(std::vector<int> shape, Rng& rng, double stdev, bool requires_grad = true) {
        std::vector<double> v(static_cast<size_t>(detail::numel(shape)));
        for (double& x : v) x = rng.normal(0.0, stdev);
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    bool defined() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int64_t size() const { return static_cast<int64_t>(d_->data.size()); }

    int rows() const { return d_->shape.size() == 2 ? d_->shape[0] : 1; }
    int cols() const { return d_->shape.size() == 2 ? d_->shape[1] : d_->shape[0]; }

    const std::vector<double>& data() const { return d_->data; }
    std::vector<double>& mutable_data() { return d_->data; }

    double operator()(int i) const { return d_->data[static_cast<size_t>(i)]; }
    double operator()(int i, int j) const { return d_->data[static_cast<size_t>(i) * cols() + j]; }
    double item() const {
        if (size() != 1) throw ContractError("item() on non-scalar tensor " + detail::shape_str(shape()));
        return d_->data[0];
    }

    bool requires_grad() const { return d_ && d_->requires_grad; }
    bool has_grad() const { return d_ && !d_->grad.empty(); }
    const std::vector<double>& grad() const {
        if (d_->grad.empty()) throw ContractError("tensor has no gradient buffer");
        return d_->grad;
    }

    bool same_storage(const Tensor& o) const { return d_ == o.d_; }

    detail::TensorData* impl() const { return d_.get(); }

  private:
    std::shared_ptr<detail::TensorData> d_;
};

// Ordered record of the ops from one forward pass. Ops append in execution
// order, which is a topological order by construction; replaying the list
// backwards visits each node exactly once.
class Tape {
  public:
    explicit Tape(bool recording = true) : recording_(recording), id_(next_id()) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    uint64_t id() const { return id_; }
    size_t node_count() const { return nodes_.size(); }

    // Assign this tensor a node id on this tape. Fresh registration zeroes the
    // gradient buffer of grad-requiring tensors so backward accumulates cleanly.
    int ensure_registered(const Tensor& t) {
        detail::TensorData* d = t.impl();
        if (d->tape_id != id_) {
            d->tape_id = id_;
            d->node_id = next_node_id_++;
            if (d->requires_grad) d->grad.assign(d->data.size(), 0.0);
        }
        return d->node_id;
    }

    void record(const char* kind, std::vector<int> inputs, int output, std::function<void()> backprop) {
        nodes_.push_back(Node{kind, std::move(inputs), output, std::move(backprop)});
    }

    // Reverse-mode sweep from a scalar loss. Gradients of every grad-requiring
    // tensor reachable from the loss accumulate into their grad buffers. Call
    // once per tape.
    void backward(const Tensor& loss) {
        if (!loss.defined() || loss.size() != 1) {
            throw ContractError("backward requires a scalar loss");
        }
        detail::TensorData* d = loss.impl();
        if (!d->requires_grad) return; // nothing reachable requires grad
        if (d->tape_id != id_) throw ContractError("loss tensor is not on this tape");
        d->grad.assign(1, 1.0);
        for (size_t i = nodes_.size(); i > 0; --i) {
            nodes_[i - 1].backprop();
        }
    }

  private:
    struct Node {
        const char* kind;
        std::vector<int> inputs;
        int output;
        std::function<void()> backprop;
    };

    static uint64_t next_id() {
        static std::atomic<uint64_t> counter{1};
        return counter.fetch_add(1);
    }

    std::vector<Node> nodes_;
    int next_node_id_ = 0;
    bool recording_;
    uint64_t id_;
};

namespace detail {

inline void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string(op) + " produced a non-finite value");
    }
}

// Shared tail of every op: finiteness check, requires_grad propagation, tape
// recording. `make_backprop(out)` builds the closure once the output handle
// exists; closures capture tensor handles by value, which keeps activations
// alive for the lifetime of the tape.
template <class MakeBackprop>
Tensor finish_op(Tape& tape, const char* kind, std::initializer_list<const Tensor*> inputs,
                 std::vector<int> out_shape, std::vector<double> out_data,
                 MakeBackprop&& make_backprop) {
    check_finite(kind, out_data);
    bool needs_grad = false;
    if (tape.recording()) {
        for (const Tensor* t : inputs) {
            if (t->requires_grad()) { needs_grad = true; break; }
        }
    }
    Tensor out(std::move(out_shape), std::move(out_data), needs_grad);
    if (needs_grad) {
        std::vector<int> ids;
        ids.reserve(inputs.size());
        for (const Tensor* t : inputs) ids.push_back(tape.ensure_registered(*t));
        const int out_id = tape.ensure_registered(out);
        tape.record(kind, std::move(ids), out_id, make_backprop(out));
    }
    return out;
}

inline const std::vector<double>& grad_of(const Tensor& t) { return t.impl()->grad; }
inline std::vector<double>& grad_buf(const Tensor& t) { return t.impl()->grad; }

} // namespace detail

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw DimensionError("matmul shape mismatch: " + detail::shape_str(a.shape()) +
                             " x " + detail::shape_str(b.shape()));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
            out[static_cast<size_t>(i) * n + j] = acc;
        }
    return detail::finish_op(tape, "matmul", {&a, &b}, {m, n}, std::move(out), [&](const Tensor& o) {
        return [a, b, o, m, k, n]() {
            const auto& go = detail::grad_of(o);
            if (a.requires_grad()) {
                auto& da = detail::grad_buf(a);
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += go[static_cast<size_t>(i) * n + j] * b(p, j);
                        da[static_cast<size_t>(i) * k + p] += acc;
                    }
            }
            if (b.requires_grad()) {
                auto& db = detail::grad_buf(b);
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < m; ++i) acc += a(i, p) * go[static_cast<size_t>(i) * n + j];
                        db[static_cast<size_t>(p) * n + j] += acc;
                    }
            }
        };
    });
}

namespace detail {

enum class EwKind { Add, Sub, Mul };

inline Tensor elementwise(Tape& tape, EwKind kind, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("elementwise shape mismatch: " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
    const size_t n = static_cast<size_t>(a.size());
    std::vector<double> out(n);
    const char* name = kind == EwKind::Add ? "add" : kind == EwKind::Sub ? "sub" : "mul";
    for (size_t i = 0; i < n; ++i) {
        const double x = a.data()[i], y = b.data()[i];
        out[i] = kind == EwKind::Add ? x + y : kind == EwKind::Sub ? x - y : x * y;
    }
    return finish_op(tape, name, {&a, &b}, a.shape(), std::move(out), [&](const Tensor& o) {
        return [a, b, o, kind, n]() {
            const auto& go = grad_of(o);
            if (a.requires_grad()) {
                auto& da = grad_buf(a);
                for (size_t i = 0; i < n; ++i)
                    da[i] += kind == EwKind::Mul ? go[i] * b.data()[i] : go[i];
            }
            if (b.requires_grad()) {
                auto& db = grad_buf(b);
                for (size_t i = 0; i < n; ++i)
                    db[i] += kind == EwKind::Mul ? go[i] * a.data()[i]
                           : kind == EwKind::Sub ? -go[i] : go[i];
            }
        };
    });
}

} // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    return detail::elementwise(tape, detail::EwKind::Add, a, b);
}
inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    return detail::elementwise(tape, detail::EwKind::Sub, a, b);
}
inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    return detail::elementwise(tape, detail::EwKind::Mul, a, b);
}

inline Tensor scale(Tape& tape, const Tensor& a, double c) {
    const size_t n = static_cast<size_t>(a.size());
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = a.data()[i] * c;
    return detail::finish_op(tape, "scale", {&a}, a.shape(), std::move(out), [&](const Tensor& o) {
        return [a, o, c, n]() {
            if (!a.requires_grad()) return;
            const auto& go = detail::grad_of(o);
            auto& da = detail::grad_buf(a);
            for (size_t i = 0; i < n; ++i) da[i] += go[i] * c;
        };
    });
}

// m[i,j] + v[j]; the row-bias primitive.
inline Tensor add_row_vector(Tape& tape, const Tensor& m, const Tensor& v) {
    if (m.rank() != 2 || v.rank() != 1 || m.cols() != v.cols()) {
        throw DimensionError("add_row_vector shape mismatch: " + detail::shape_str(m.shape()) +
                             " + " + detail::shape_str(v.shape()));
    }
    const int r = m.rows(), c = m.cols();
    std::vector<double> out(static_cast<size_t>(r) * c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] = m(i, j) + v(j);
    return detail::finish_op(tape, "add_row_vector", {&m, &v}, m.shape(), std::move(out), [&](const Tensor& o) {
        return [m, v, o, r, c]() {
            const auto& go = detail::grad_of(o);
            if (m.requires_grad()) {
                auto& dm = detail::grad_buf(m);
                for (size_t i = 0; i < static_cast<size_t>(r) * c; ++i) dm[i] += go[i];
            }
            if (v.requires_grad()) {
                auto& dv = detail::grad_buf(v);
                for (int j = 0; j < c; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < r; ++i) acc += go[static_cast<size_t>(i) * c + j];
                    dv[static_cast<size_t>(j)] += acc;
                }
            }
        };
    });
}

inline Tensor transpose(Tape& tape, const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose requires a rank-2 tensor");
    const int r = a.rows(), c = a.cols();
    std::vector<double> out(static_cast<size_t>(r) * c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(j) * r + i] = a(i, j);
    return detail::finish_op(tape, "transpose", {&a}, {c, r}, std::move(out), [&](const Tensor& o) {
        return [a, o, r, c]() {
            if (!a.requires_grad()) return;
            const auto& go = detail::grad_of(o);
            auto& da = detail::grad_buf(a);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) da[static_cast<size_t>(i) * c + j] += go[static_cast<size_t>(j) * r + i];
        };
    });
}

// Softmax over the last axis with max-subtraction. Rows sum to 1.
inline Tensor softmax(Tape& tape, const Tensor& x) {
    if (x.rank() < 1 || x.rank() > 2) throw DimensionError("softmax requires rank 1 or 2");
    const int r = x.rows(), c = x.cols();
    std::vector<double> out(static_cast<size_t>(r) * c);
    for (int i = 0; i < r; ++i) {
        double mx = x.data()[static_cast<size_t>(i) * c];
        for (int j = 1; j < c; ++j) mx = std::max(mx, x.data()[static_cast<size_t>(i) * c + j]);
        double s = 0.0;
        for (int j = 0; j < c; ++j) {
            const double e = std::exp(x.data()[static_cast<size_t>(i) * c + j] - mx);
            out[static_cast<size_t>(i) * c + j] = e;
            s += e;
        }
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] /= s;
    }
    return detail::finish_op(tape, "softmax", {&x}, x.shape(), std::move(out), [&](const Tensor& o) {
        return [x, o, r, c]() {
            if (!x.requires_grad()) return;
            const auto& go = detail::grad_of(o);
            auto& dx = detail::grad_buf(x);
            for (int i = 0; i < r; ++i) {
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += go[static_cast<size_t>(i) * c + j] * o.data()[static_cast<size_t>(i) * c + j];
                for (int j = 0; j < c; ++j) {
                    const size_t k = static_cast<size_t>(i) * c + j;
                    dx[k] += o.data()[k] * (go[k] - dot);
                }
            }
        };
    });
}

// Per-slice normalization over the last axis, then affine: gain * x_hat + bias.
// Epsilon 1e-5 sits inside the variance square root.
inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias) {
    if (gain.rank() != 1 || bias.rank() != 1 || gain.cols() != x.cols() || bias.cols() != x.cols()) {
        throw DimensionError("layer_norm gain/bias must match the feature extent " + std::to_string(x.cols()));
    }
    constexpr double kEps = 1e-5;
    const int r = x.rows(), c = x.cols();
    std::vector<double> out(static_cast<size_t>(r) * c);
    std::vector<double> xhat(static_cast<size_t>(r) * c);
    std::vector<double> inv_sigma(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += x.data()[static_cast<size_t>(i) * c + j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double dlt = x.data()[static_cast<size_t>(i) * c + j] - mean;
            var += dlt * dlt;
        }
        var /= c;
        const double is = 1.0 / std::sqrt(var + kEps);
        inv_sigma[static_cast<size_t>(i)] = is;
        for (int j = 0; j < c; ++j) {
            const size_t k = static_cast<size_t>(i) * c + j;
            xhat[k] = (x.data()[k] - mean) * is;
            out[k] = gain(j) * xhat[k] + bias(j);
        }
    }
    return detail::finish_op(tape, "layer_norm", {&x, &gain, &bias}, x.shape(), std::move(out),
                             [&](const Tensor& o) {
        return [x, gain, bias, o, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma), r, c]() {
            const auto& go = detail::grad_of(o);
            if (gain.requires_grad()) {
                auto& dg = detail::grad_buf(gain);
                for (int j = 0; j < c; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < r; ++i) acc += go[static_cast<size_t>(i) * c + j] * xhat[static_cast<size_t>(i) * c + j];
                    dg[static_cast<size_t>(j)] += acc;
                }
            }
            if (bias.requires_grad()) {
                auto& db = detail::grad_buf(bias);
                for (int j = 0; j < c; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < r; ++i) acc += go[static_cast<size_t>(i) * c + j];
                    db[static_cast<size_t>(j)] += acc;
                }
            }
            if (x.requires_grad()) {
                auto& dx = detail::grad_buf(x);
                for (int i = 0; i < r; ++i) {
                    double sum_gy = 0.0, sum_gy_xhat = 0.0;
                    for (int j = 0; j < c; ++j) {
                        const size_t k = static_cast<size_t>(i) * c + j;
                        const double gy = go[k] * gain(j);
                        sum_gy += gy;
                        sum_gy_xhat += gy * xhat[k];
                    }
                    const double mean_gy = sum_gy / c;
                    const double mean_gy_xhat = sum_gy_xhat / c;
                    for (int j = 0; j < c; ++j) {
                        const size_t k = static_cast<size_t>(i) * c + j;
                        const double gy = go[k] * gain(j);
                        dx[k] += inv_sigma[static_cast<size_t>(i)] * (gy - mean_gy - xhat[k] * mean_gy_xhat);
                    }
                }
            }
        };
    });
}

// Exact GELU: x * Phi(x) with the Gaussian CDF.
inline Tensor gelu(Tape& tape, const Tensor& x) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    const size_t n = static_cast<size_t>(x.size());
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        const double v = x.data()[i];
        out[i] = v * 0.5 * std::erfc(-v * kInvSqrt2);
    }
    return detail::finish_op(tape, "gelu", {&x}, x.shape(), std::move(out), [&](const Tensor& o) {
        return [x, o, n]() {
            if (!x.requires_grad()) return;
            const auto& go = detail::grad_of(o);
            auto& dx = detail::grad_buf(x);
            constexpr double kInvSqrt2 = 0.70710678118654752440;
            constexpr double kInvSqrt2Pi = 0.3989422804014326779;
            for (size_t i = 0; i < n; ++i) {
                const double v = x.data()[i];
                const double cdf = 0.5 * std::erfc(-v * kInvSqrt2);
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                dx[i] += go[i] * (cdf + v * pdf);
            }
        };
    });
}

// Sum of all elements, left-to-right, as a {1} scalar.
inline Tensor sum(Tape& tape, const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return detail::finish_op(tape, "sum", {&x}, {1}, {acc}, [&](const Tensor& o) {
        return [x, o]() {
            if (!x.requires_grad()) return;
            const double g = detail::grad_of(o)[0];
            auto& dx = detail::grad_buf(x);
            for (double& v : dx) v += g;
        };
    });
}

inline Tensor reshape(Tape& tape, const Tensor& x, std::vector<int> shape) {
    if (detail::numel(shape) != x.size()) {
        throw DimensionError("reshape element count mismatch: " + detail::shape_str(x.shape()) +
                             " -> " + detail::shape_str(shape));
    }
    std::vector<double> out = x.data();
    return detail::finish_op(tape, "reshape", {&x}, std::move(shape), std::move(out), [&](const Tensor& o) {
        return [x, o]() {
            if (!x.requires_grad()) return;
            const auto& go = detail::grad_of(o);
            auto& dx = detail::grad_buf(x);
            for (size_t i = 0; i < go.size(); ++i) dx[i] += go[i];
        };
    });
}

namespace detail {

inline Tensor concat2(Tape& tape, const std::vector<Tensor>& parts, bool along_rows) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const char* name = along_rows ? "concat_rows" : "concat_cols";
    const int fixed = along_rows ? parts[0].cols() : parts[0].rows();
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2) throw DimensionError(std::string(name) + " requires rank-2 tensors");
        const int f = along_rows ? p.cols() : p.rows();
        if (f != fixed) throw DimensionError(std::string(name) + " extent mismatch");
        total += along_rows ? p.rows() : p.cols();
    }
    const int out_r = along_rows ? total : fixed;
    const int out_c = along_rows ? fixed : total;
    std::vector<double> out(static_cast<size_t>(out_r) * out_c);
    int offset = 0;
    for (const Tensor& p : parts) {
        for (int i = 0; i < p.rows(); ++i)
            for (int j = 0; j < p.cols(); ++j) {
                const int oi = along_rows ? offset + i : i;
                const int oj = along_rows ? j : offset + j;
                out[static_cast<size_t>(oi) * out_c + oj] = p(i, j);
            }
        offset += along_rows ? p.rows() : p.cols();
    }
    // finish_op takes an initializer_list; build the record by hand for a
    // variable input count.
    check_finite(name, out);
    bool needs_grad = false;
    if (tape.recording()) {
        for (const Tensor& p : parts)
            if (p.requires_grad()) { needs_grad = true; break; }
    }
    Tensor result({out_r, out_c}, std::move(out), needs_grad);
    if (needs_grad) {
        std::vector<int> ids;
        for (const Tensor& p : parts) ids.push_back(tape.ensure_registered(p));
        const int out_id = tape.ensure_registered(result);
        tape.record(name, std::move(ids), out_id,
                    [parts, result, along_rows, out_c]() {
            const auto& go = grad_of(result);
            int offset = 0;
            for (const Tensor& p : parts) {
                if (p.requires_grad()) {
                    auto& dp = grad_buf(p);
                    for (int i = 0; i < p.rows(); ++i)
                        for (int j = 0; j < p.cols(); ++j) {
                            const int oi = along_rows ? offset + i : i;
                            const int oj = along_rows ? j : offset + j;
                            dp[static_cast<size_t>(i) * p.cols() + j] += go[static_cast<size_t>(oi) * out_c + oj];
                        }
                }
                offset += along_rows ? p.rows() : p.cols();
            }
        });
    }
    return result;
}

} // namespace detail

inline Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
    return detail::concat2(tape, parts, true);
}

inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
    return detail::concat2(tape, parts, false);
}

// Stack rank-1 tensors of equal length into a rank-2 tensor, one per row.
inline Tensor stack_rows(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("stack_rows of zero tensors");
    std::vector<Tensor> rows;
    rows.reserve(parts.size());
    Tape* t = &tape;
    for (const Tensor& p : parts) {
        if (p.rank() != 1) throw DimensionError("stack_rows requires rank-1 tensors");
        rows.push_back(reshape(*t, p, {1, p.cols()}));
    }
    return concat_rows(tape, rows);
}

// Gather rows of `table` by index; the embedding-lookup primitive.
inline Tensor embedding_rows(Tape& tape, const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw DimensionError("embedding_rows requires a rank-2 table");
    if (ids.empty()) throw ContractError("embedding_rows on an empty id sequence");
    const int v = table.rows(), d = table.cols();
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw ContractError("token id " + std::to_string(id) + " out of range for table of " + std::to_string(v));
        }
    }
    const int n = static_cast<int>(ids.size());
    std::vector<double> out(static_cast<size_t>(n) * d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[static_cast<size_t>(i) * d + j] = table(ids[static_cast<size_t>(i)], j);
    return detail::finish_op(tape, "embedding_rows", {&table}, {n, d}, std::move(out), [&](const Tensor& o) {
        return [table, o, ids, n, d]() {
            if (!table.requires_grad()) return;
            const auto& go = detail::grad_of(o);
            auto& dt = detail::grad_buf(table);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    dt[static_cast<size_t>(ids[static_cast<size_t>(i)]) * d + j] += go[static_cast<size_t>(i) * d + j];
        };
    });
}

// x / ||x||_2 for a rank-1 tensor. Zero-norm input is a contract error.
inline Tensor l2_normalize(Tape& tape, const Tensor& x) {
    if (x.rank() != 1) throw DimensionError("l2_normalize requires a rank-1 tensor");
    double nsq = 0.0;
    for (double v : x.data()) nsq += v * v;
    const double norm = std::sqrt(nsq);
    if (norm == 0.0) throw ContractError("l2_normalize on a zero vector");
    const int d = x.cols();
    std::vector<double> out(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] = x(j) / norm;
    return detail::finish_op(tape, "l2_normalize", {&x}, x.shape(), std::move(out), [&](const Tensor& o) {
        return [x, o, norm, d]() {
            if (!x.requires_grad()) return;
            const auto& go = detail::grad_of(o);
            auto& dx = detail::grad_buf(x);
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += go[static_cast<size_t>(j)] * o(j);
            for (int j = 0; j < d; ++j) dx[static_cast<size_t>(j)] += (go[static_cast<size_t>(j)] - dot * o(j)) / norm;
        };
    });
}

// Mean over rows, optionally restricted to rows where mask != 0.
inline Tensor mean_rows(Tape& tape, const Tensor& m, const std::vector<int>* row_mask = nullptr) {
    if (m.rank() != 2) throw DimensionError("mean_rows requires a rank-2 tensor");
    const int r = m.rows(), c = m.cols();
    if (row_mask && static_cast<int>(row_mask->size()) != r) {
        throw DimensionError("mean_rows mask length " + std::to_string(row_mask->size()) +
                             " does not match row count " + std::to_string(r));
    }
    int count = 0;
    for (int i = 0; i < r; ++i)
        if (!row_mask || (*row_mask)[static_cast<size_t>(i)] != 0) ++count;
    if (count == 0) throw ContractError("mean_rows with no active rows");
    std::vector<double> out(static_cast<size_t>(c), 0.0);
    for (int i = 0; i < r; ++i) {
        if (row_mask && (*row_mask)[static_cast<size_t>(i)] == 0) continue;
        for (int j = 0; j < c; ++j) out[static_cast<size_t>(j)] += m(i, j);
    }
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(j)] /= count;
    std::vector<int> mask_copy = row_mask ? *row_mask : std::vector<int>();
    return detail::finish_op(tape, "mean_rows", {&m}, {c}, std::move(out), [&](const Tensor& o) {
        return [m, o, mask_copy = std::move(mask_copy), r, c, count]() {
            if (!m.requires_grad()) return;
            const auto& go = detail::grad_of(o);
            auto& dm = detail::grad_buf(m);
            for (int i = 0; i < r; ++i) {
                if (!mask_copy.empty() && mask_copy[static_cast<size_t>(i)] == 0) continue;
                for (int j = 0; j < c; ++j) dm[static_cast<size_t>(i) * c + j] += go[static_cast<size_t>(j)] / count;
            }
        };
    });
}

// Sum over rows of the softmax cross-entropy between each logit row and its
// integer target, skipping rows where mask == 0. The caller divides by the
// active row count when a mean is wanted.
inline Tensor cross_entropy_sum(Tape& tape, const Tensor& logits, const std::vector<int>& targets,
                                const std::vector<int>* row_mask = nullptr) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy_sum requires rank-2 logits");
    const int r = logits.rows(), c = logits.cols();
    if (static_cast<int>(targets.size()) != r) {
        throw DimensionError("cross_entropy_sum target count " + std::to_string(targets.size()) +
                             " does not match logit rows " + std::to_string(r));
    }
    if (row_mask && static_cast<int>(row_mask->size()) != r) {
        throw DimensionError("cross_entropy_sum mask length does not match logit rows");
    }
    double loss = 0.0;
    for (int i = 0; i < r; ++i) {
        if (row_mask && (*row_mask)[static_cast<size_t>(i)] == 0) continue;
        const int t = targets[static_cast<size_t>(i)];
        if (t < 0 || t >= c) throw ContractError("cross_entropy target " + std::to_string(t) + " out of range");
        double mx = logits(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += std::exp(logits(i, j) - mx);
        loss += mx + std::log(s) - logits(i, t);
    }
    std::vector<int> mask_copy = row_mask ? *row_mask : std::vector<int>();
    return detail::finish_op(tape, "cross_entropy_sum", {&logits}, {1}, {loss}, [&](const Tensor& o) {
        return [logits, o, targets, mask_copy = std::move(mask_copy), r, c]() {
            if (!logits.requires_grad()) return;
            const double g = detail::grad_of(o)[0];
            auto& dl = detail::grad_buf(logits);
            for (int i = 0; i < r; ++i) {
                if (!mask_copy.empty() && mask_copy[static_cast<size_t>(i)] == 0) continue;
                double mx = logits(i, 0);
                for (int j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
                double s = 0.0;
                for (int j = 0; j < c; ++j) s += std::exp(logits(i, j) - mx);
                for (int j = 0; j < c; ++j) {
                    const double p = std::exp(logits(i, j) - mx) / s;
                    const double onehot = j == targets[static_cast<size_t>(i)] ? 1.0 : 0.0;
                    dl[static_cast<size_t>(i) * c + j] += g * (p - onehot);
                }
            }
        };
    });
}

} // namespace repsnet
