#pragma once

// Reverse-mode autodiff over dense row-major n-d arrays. The tensor type is
// templated on the scalar so the training path runs in f32 while the
// gradient-check harness instantiates the identical code in f64.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dae/errors.hpp"
#include "dae/kernels.hpp"
#include "dae/rng.hpp"

namespace dae {

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::size_t shape_numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

template <typename T>
class TapeT;

template <typename T>
struct TensorImpl {
    std::vector<std::size_t> shape;
    std::vector<T> value;
    std::vector<T> grad;        // empty until first accumulation
    bool requires_grad = false;
    TapeT<T>* tape = nullptr;   // producing tape, null for leaves
    int node = -1;              // producing node index, -1 for leaves
};

template <typename T>
class TensorT {
public:
    TensorT() = default;

    static TensorT zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        TensorT t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = std::move(shape);
        t.impl_->value.assign(shape_numel(t.impl_->shape), T(0));
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static TensorT full(std::vector<std::size_t> shape, T v, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (auto& x : t.impl_->value) x = v;
        return t;
    }

    static TensorT from(std::vector<std::size_t> shape, std::vector<T> data,
                        bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        TensorT t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = std::move(shape);
        t.impl_->value = std::move(data);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static TensorT scalar(T v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return impl_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape[i]; }
    std::size_t numel() const { return impl_->value.size(); }
    std::vector<T>& data() { return impl_->value; }
    const std::vector<T>& data() const { return impl_->value; }
    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    T item() const {
        if (numel() != 1)
            throw ContractError("item: tensor has shape " + shape_str(impl_->shape) +
                                ", expected a scalar");
        return impl_->value[0];
    }

    // Gradient buffer, allocated as zeros on first access.
    std::vector<T>& grad() {
        if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), T(0));
        return impl_->grad;
    }
    const std::vector<T>& grad() const { return impl_->grad; }
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad() {
        if (!impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), T(0));
    }

    std::shared_ptr<TensorImpl<T>>& impl() { return impl_; }
    const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
class TapeT {
public:
    using ImplPtr = std::shared_ptr<TensorImpl<T>>;

    struct Node {
        std::vector<ImplPtr> parents;
        ImplPtr out;
        std::function<void()> backward;
    };

    TapeT() = default;
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    std::size_t size() const { return nodes_.size(); }

    void record(Node n) {
        n.out->tape = this;
        n.out->node = static_cast<int>(nodes_.size());
        nodes_.push_back(std::move(n));
    }

    // Accumulates d(loss)/d(leaf) into every reachable requires_grad leaf.
    // Repeated calls accumulate; intermediate grads are reset per call.
    void backward(const TensorT<T>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward: loss must be a scalar, got shape " +
                                shape_str(loss.shape()));
        const ImplPtr& li = loss.impl();
        if (!li->requires_grad) return;
        if (li->node < 0) {
            // loss is itself a leaf
            if (li->grad.empty()) li->grad.assign(1, T(0));
            li->grad[0] += T(1);
            return;
        }
        if (li->tape != this)
            throw ContractError("backward: loss was recorded on a different tape");

        std::vector<char> reachable(nodes_.size(), 0);
        std::vector<int> stack{li->node};
        reachable[li->node] = 1;
        while (!stack.empty()) {
            const int idx = stack.back();
            stack.pop_back();
            for (const ImplPtr& p : nodes_[idx].parents) {
                if (p->tape == this && p->node >= 0 && p->requires_grad &&
                    !reachable[p->node]) {
                    reachable[p->node] = 1;
                    stack.push_back(p->node);
                }
            }
        }
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (reachable[i]) {
                ImplPtr& o = nodes_[i].out;
                o->grad.assign(o->value.size(), T(0));
            }
        }
        li->grad[0] = T(1);
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            if (reachable[i]) nodes_[i].backward();
        }
    }

    // Ops record on the innermost active scope's tape; with no scope active
    // they run forward-only.
    class Scope {
    public:
        explicit Scope(TapeT& t) : prev_(current_) { current_ = &t; }
        ~Scope() { current_ = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        TapeT* prev_;
    };

    static TapeT* current() { return current_; }

private:
    std::vector<Node> nodes_;
    static thread_local TapeT* current_;
};

template <typename T>
thread_local TapeT<T>* TapeT<T>::current_ = nullptr;

using DiffTensor = TensorT<float>;
using Tape = TapeT<float>;

// ---------------------------------------------------------------------------
// op helpers
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
std::vector<T>& ensure_grad(const std::shared_ptr<TensorImpl<T>>& impl) {
    if (impl->grad.empty()) impl->grad.assign(impl->value.size(), T(0));
    return impl->grad;
}

template <typename T, typename... Parents>
bool wants_grad(const Parents&... parents) {
    return TapeT<T>::current() != nullptr && (parents.requires_grad() || ...);
}

template <typename T>
void record_op(TensorT<T>& out, std::vector<std::shared_ptr<TensorImpl<T>>> parents,
               std::function<void()> backward) {
    out.impl()->requires_grad = true;
    TapeT<T>::current()->record({std::move(parents), out.impl(), std::move(backward)});
}

// (outer, extent, inner) decomposition of one axis of a row-major shape.
struct AxisSplit {
    std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const std::vector<std::size_t>& shape, std::size_t axis) {
    if (axis >= shape.size())
        throw ContractError("axis " + std::to_string(axis) + " out of range for shape " +
                            shape_str(shape));
    AxisSplit s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

} // namespace detail

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    TensorT<T> out = TensorT<T>::zeros({m, n});
    kernels::matmul_t(a.data().data(), b.data().data(), out.data().data(), m, k, n, false);
    if (detail::wants_grad<T>(a, b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai, bi}, [ai, bi, oi, m, k, n] {
            if (ai->requires_grad) {
                auto& da = detail::ensure_grad(ai);
                kernels::matmul_nt_t(oi->grad.data(), bi->value.data(), da.data(), m, n, k, true);
            }
            if (bi->requires_grad) {
                auto& db = detail::ensure_grad(bi);
                kernels::matmul_tn_t(ai->value.data(), oi->grad.data(), db.data(), k, m, n, true);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / layer_norm / elementwise nonlinearities
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, std::size_t axis) {
    const auto sp = detail::split_axis(x.shape(), axis);
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const T* xv = x.data().data();
    T* yv = out.data().data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.extent * sp.inner + in;
            T mx = xv[base];
            for (std::size_t i = 1; i < sp.extent; ++i)
                mx = std::max(mx, xv[base + i * sp.inner]);
            T denom = T(0);
            for (std::size_t i = 0; i < sp.extent; ++i) {
                const T e = std::exp(xv[base + i * sp.inner] - mx);
                yv[base + i * sp.inner] = e;
                denom += e;
            }
            for (std::size_t i = 0; i < sp.extent; ++i) yv[base + i * sp.inner] /= denom;
        }
    }
    if (detail::wants_grad<T>(x)) {
        auto xi = x.impl(), oi = out.impl();
        detail::record_op<T>(out, {xi}, [xi, oi, sp] {
            auto& dx = detail::ensure_grad(xi);
            const auto& y = oi->value;
            const auto& dy = oi->grad;
            for (std::size_t o = 0; o < sp.outer; ++o) {
                for (std::size_t in = 0; in < sp.inner; ++in) {
                    const std::size_t base = o * sp.extent * sp.inner + in;
                    T s = T(0);
                    for (std::size_t i = 0; i < sp.extent; ++i) {
                        const std::size_t idx = base + i * sp.inner;
                        s += dy[idx] * y[idx];
                    }
                    for (std::size_t i = 0; i < sp.extent; ++i) {
                        const std::size_t idx = base + i * sp.inner;
                        dx[idx] += y[idx] * (dy[idx] - s);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = T(1e-5)) {
    if (x.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
    const std::size_t c = x.shape().back();
    if (gamma.numel() != c || beta.numel() != c)
        throw ShapeError("layer_norm: gamma/beta length must match last extent " +
                         std::to_string(c) + ", got " + shape_str(gamma.shape()) + " and " +
                         shape_str(beta.shape()));
    const std::size_t rows = x.numel() / c;
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    std::vector<T> xhat(x.numel());
    std::vector<T> inv_std(rows);
    const T* xv = x.data().data();
    const T* gv = gamma.data().data();
    const T* bv = beta.data().data();
    T* yv = out.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv + r * c;
        T mu = T(0);
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu /= static_cast<T>(c);
        T var = T(0);
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(c);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < c; ++j) {
            const T xh = (row[j] - mu) * is;
            xhat[r * c + j] = xh;
            yv[r * c + j] = gv[j] * xh + bv[j];
        }
    }
    if (detail::wants_grad<T>(x, gamma, beta)) {
        auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
        detail::record_op<T>(
            out, {xi, gi, bi},
            [xi, gi, bi, oi, rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
                const auto& dy = oi->grad;
                for (std::size_t r = 0; r < rows; ++r) {
                    const std::size_t base = r * c;
                    if (gi->requires_grad) {
                        auto& dg = detail::ensure_grad(gi);
                        for (std::size_t j = 0; j < c; ++j)
                            dg[j] += dy[base + j] * xhat[base + j];
                    }
                    if (bi->requires_grad) {
                        auto& db = detail::ensure_grad(bi);
                        for (std::size_t j = 0; j < c; ++j) db[j] += dy[base + j];
                    }
                    if (xi->requires_grad) {
                        auto& dx = detail::ensure_grad(xi);
                        T mean_d = T(0), mean_dx = T(0);
                        for (std::size_t j = 0; j < c; ++j) {
                            const T d = dy[base + j] * gi->value[j];
                            mean_d += d;
                            mean_dx += d * xhat[base + j];
                        }
                        mean_d /= static_cast<T>(c);
                        mean_dx /= static_cast<T>(c);
                        for (std::size_t j = 0; j < c; ++j) {
                            const T d = dy[base + j] * gi->value[j];
                            dx[base + j] +=
                                inv_std[r] * (d - mean_d - xhat[base + j] * mean_dx);
                        }
                    }
                }
            });
    }
    return out;
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
    static const T kInvSqrt2 = T(0.70710678118654752440);
    static const T kInvSqrt2Pi = T(0.39894228040143267794);
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const T* xv = x.data().data();
    T* yv = out.data().data();
    for (std::size_t i = 0; i < x.numel(); ++i)
        yv[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * kInvSqrt2));
    if (detail::wants_grad<T>(x)) {
        auto xi = x.impl(), oi = out.impl();
        detail::record_op<T>(out, {xi}, [xi, oi] {
            auto& dx = detail::ensure_grad(xi);
            const auto& dy = oi->grad;
            for (std::size_t i = 0; i < xi->value.size(); ++i) {
                const T v = xi->value[i];
                const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
                const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
                dx[i] += dy[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const T* xv = x.data().data();
    T* yv = out.data().data();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T v = xv[i];
        yv[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                          : std::exp(v) / (T(1) + std::exp(v));
    }
    if (detail::wants_grad<T>(x)) {
        auto xi = x.impl(), oi = out.impl();
        detail::record_op<T>(out, {xi}, [xi, oi] {
            auto& dx = detail::ensure_grad(xi);
            for (std::size_t i = 0; i < xi->value.size(); ++i) {
                const T y = oi->value[i];
                dx[i] += oi->grad[i] * y * (T(1) - y);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise binary ops; b may equal a's shape, be a scalar, or be a
// row-major suffix of a's shape (bias-style broadcast)
// ---------------------------------------------------------------------------

namespace detail {

enum class Broadcast { same, scalar, suffix };

template <typename T>
Broadcast binary_mode(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() == b.shape()) return Broadcast::same;
    if (b.numel() == 1) return Broadcast::scalar;
    const auto& as = a.shape();
    const auto& bs = b.shape();
    if (bs.size() <= as.size() &&
        std::equal(bs.begin(), bs.end(), as.end() - bs.size()) && b.numel() > 0)
        return Broadcast::suffix;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(as) + " and " +
                     shape_str(bs));
}

} // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    const auto mode = detail::binary_mode(a, b, "add");
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const std::size_t n = a.numel(), bn = b.numel();
    if (mode == detail::Broadcast::same) {
        kernels::add_t(a.data().data(), b.data().data(), out.data().data(), n);
    } else if (mode == detail::Broadcast::scalar) {
        const T s = b.data()[0];
        for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + s;
    } else {
        for (std::size_t blk = 0; blk < n / bn; ++blk)
            kernels::add_t(a.data().data() + blk * bn, b.data().data(),
                           out.data().data() + blk * bn, bn);
    }
    if (detail::wants_grad<T>(a, b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai, bi}, [ai, bi, oi, n, bn] {
            if (ai->requires_grad) {
                auto& da = detail::ensure_grad(ai);
                kernels::axpy_t(T(1), oi->grad.data(), da.data(), n);
            }
            if (bi->requires_grad) {
                auto& db = detail::ensure_grad(bi);
                for (std::size_t i = 0; i < n; ++i) db[i % bn] += oi->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    const auto mode = detail::binary_mode(a, b, "sub");
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const std::size_t n = a.numel(), bn = b.numel();
    if (mode == detail::Broadcast::same) {
        kernels::sub_t(a.data().data(), b.data().data(), out.data().data(), n);
    } else if (mode == detail::Broadcast::scalar) {
        const T s = b.data()[0];
        for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - s;
    } else {
        for (std::size_t blk = 0; blk < n / bn; ++blk)
            kernels::sub_t(a.data().data() + blk * bn, b.data().data(),
                           out.data().data() + blk * bn, bn);
    }
    if (detail::wants_grad<T>(a, b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai, bi}, [ai, bi, oi, n, bn] {
            if (ai->requires_grad) {
                auto& da = detail::ensure_grad(ai);
                kernels::axpy_t(T(1), oi->grad.data(), da.data(), n);
            }
            if (bi->requires_grad) {
                auto& db = detail::ensure_grad(bi);
                for (std::size_t i = 0; i < n; ++i) db[i % bn] -= oi->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    const auto mode = detail::binary_mode(a, b, "mul");
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const std::size_t n = a.numel(), bn = b.numel();
    if (mode == detail::Broadcast::same) {
        kernels::mul_t(a.data().data(), b.data().data(), out.data().data(), n);
    } else if (mode == detail::Broadcast::scalar) {
        kernels::scale_t(a.data().data(), b.data()[0], out.data().data(), n);
    } else {
        for (std::size_t blk = 0; blk < n / bn; ++blk)
            kernels::mul_t(a.data().data() + blk * bn, b.data().data(),
                           out.data().data() + blk * bn, bn);
    }
    if (detail::wants_grad<T>(a, b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai, bi}, [ai, bi, oi, n, bn] {
            if (ai->requires_grad) {
                auto& da = detail::ensure_grad(ai);
                for (std::size_t i = 0; i < n; ++i)
                    da[i] += oi->grad[i] * bi->value[i % bn];
            }
            if (bi->requires_grad) {
                auto& db = detail::ensure_grad(bi);
                for (std::size_t i = 0; i < n; ++i)
                    db[i % bn] += oi->grad[i] * ai->value[i];
            }
        });
    }
    return out;
}

// out = a * c for a compile-time-constant scalar c (no gradient into c)
template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    kernels::scale_t(a.data().data(), c, out.data().data(), a.numel());
    if (detail::wants_grad<T>(a)) {
        auto ai = a.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai}, [ai, oi, c] {
            auto& da = detail::ensure_grad(ai);
            kernels::axpy_t(c, oi->grad.data(), da.data(), ai->value.size());
        });
    }
    return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + c;
    if (detail::wants_grad<T>(a)) {
        auto ai = a.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai}, [ai, oi] {
            auto& da = detail::ensure_grad(ai);
            kernels::axpy_t(T(1), oi->grad.data(), da.data(), ai->value.size());
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structure ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> transpose(const TensorT<T>& a) {
    if (a.rank() != 2)
        throw ShapeError("transpose: expected rank-2 tensor, got " + shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    TensorT<T> out = TensorT<T>::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
    if (detail::wants_grad<T>(a)) {
        auto ai = a.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai}, [ai, oi, m, n] {
            auto& da = detail::ensure_grad(ai);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    da[i * n + j] += oi->grad[j * m + i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, std::vector<std::size_t> new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
    TensorT<T> out = TensorT<T>::from(std::move(new_shape), a.data());
    if (detail::wants_grad<T>(a)) {
        auto ai = a.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai}, [ai, oi] {
            auto& da = detail::ensure_grad(ai);
            kernels::axpy_t(T(1), oi->grad.data(), da.data(), ai->value.size());
        });
    }
    return out;
}

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::scalar(kernels::sum_t(a.data().data(), a.numel()));
    if (detail::wants_grad<T>(a)) {
        auto ai = a.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai}, [ai, oi] {
            auto& da = detail::ensure_grad(ai);
            const T g = oi->grad[0];
            for (auto& d : da) d += g;
        });
    }
    return out;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
    const T inv_n = T(1) / static_cast<T>(a.numel());
    TensorT<T> out = TensorT<T>::scalar(kernels::sum_t(a.data().data(), a.numel()) * inv_n);
    if (detail::wants_grad<T>(a)) {
        auto ai = a.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai}, [ai, oi, inv_n] {
            auto& da = detail::ensure_grad(ai);
            const T g = oi->grad[0] * inv_n;
            for (auto& d : da) d += g;
        });
    }
    return out;
}

template <typename T>
TensorT<T> sum_axis(const TensorT<T>& a, std::size_t axis) {
    const auto sp = detail::split_axis(a.shape(), axis);
    std::vector<std::size_t> out_shape = a.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out_shape.empty()) out_shape = {1};
    TensorT<T> out = TensorT<T>::zeros(out_shape);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.extent; ++i)
            for (std::size_t in = 0; in < sp.inner; ++in)
                out.data()[o * sp.inner + in] +=
                    a.data()[(o * sp.extent + i) * sp.inner + in];
    if (detail::wants_grad<T>(a)) {
        auto ai = a.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai}, [ai, oi, sp] {
            auto& da = detail::ensure_grad(ai);
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < sp.extent; ++i)
                    for (std::size_t in = 0; in < sp.inner; ++in)
                        da[(o * sp.extent + i) * sp.inner + in] +=
                            oi->grad[o * sp.inner + in];
        });
    }
    return out;
}

template <typename T>
TensorT<T> mean_axis(const TensorT<T>& a, std::size_t axis) {
    return scale(sum_axis(a, axis), T(1) / static_cast<T>(a.dim(axis)));
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    std::vector<std::size_t> out_shape = parts[0].shape();
    for (std::size_t p = 1; p < parts.size(); ++p) {
        auto s = parts[p].shape();
        if (s.size() != out_shape.size())
            throw ShapeError("concat: rank mismatch between " + shape_str(out_shape) +
                             " and " + shape_str(s));
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != out_shape[d])
                throw ShapeError("concat: extent mismatch between " + shape_str(out_shape) +
                                 " and " + shape_str(s));
        out_shape[axis] += s[axis];
    }
    const auto sp0 = detail::split_axis(parts[0].shape(), axis);
    TensorT<T> out = TensorT<T>::zeros(out_shape);
    const std::size_t total_extent = out_shape[axis];
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t ext = p.dim(axis);
        for (std::size_t o = 0; o < sp0.outer; ++o)
            for (std::size_t i = 0; i < ext; ++i)
                for (std::size_t in = 0; in < sp0.inner; ++in)
                    out.data()[(o * total_extent + offset + i) * sp0.inner + in] =
                        p.data()[(o * ext + i) * sp0.inner + in];
        offset += ext;
    }
    bool any_rg = false;
    for (const auto& p : parts) any_rg |= p.requires_grad();
    if (TapeT<T>::current() && any_rg) {
        std::vector<std::shared_ptr<TensorImpl<T>>> impls;
        impls.reserve(parts.size());
        for (const auto& p : parts) impls.push_back(p.impl());
        auto oi = out.impl();
        detail::record_op<T>(out, impls, [impls, oi, sp0, total_extent] {
            std::size_t offset = 0;
            for (const auto& pi : impls) {
                const std::size_t part_ext = pi->value.size() / (sp0.outer * sp0.inner);
                if (pi->requires_grad) {
                    auto& dp = detail::ensure_grad(pi);
                    for (std::size_t o = 0; o < sp0.outer; ++o)
                        for (std::size_t i = 0; i < part_ext; ++i)
                            for (std::size_t in = 0; in < sp0.inner; ++in)
                                dp[(o * part_ext + i) * sp0.inner + in] +=
                                    oi->grad[(o * total_extent + offset + i) * sp0.inner + in];
                }
                offset += part_ext;
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> slice(const TensorT<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
    const auto sp = detail::split_axis(a.shape(), axis);
    if (start + len > sp.extent)
        throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") exceeds extent " +
                         std::to_string(sp.extent) + " of " + shape_str(a.shape()));
    std::vector<std::size_t> out_shape = a.shape();
    out_shape[axis] = len;
    TensorT<T> out = TensorT<T>::zeros(out_shape);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < len; ++i)
            for (std::size_t in = 0; in < sp.inner; ++in)
                out.data()[(o * len + i) * sp.inner + in] =
                    a.data()[(o * sp.extent + start + i) * sp.inner + in];
    if (detail::wants_grad<T>(a)) {
        auto ai = a.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai}, [ai, oi, sp, start, len] {
            auto& da = detail::ensure_grad(ai);
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < len; ++i)
                    for (std::size_t in = 0; in < sp.inner; ++in)
                        da[(o * sp.extent + start + i) * sp.inner + in] +=
                            oi->grad[(o * len + i) * sp.inner + in];
        });
    }
    return out;
}

// out[i] = x[map[i]]; backward scatter-adds. Used for patch (dis)assembly.
template <typename T>
TensorT<T> gather(const TensorT<T>& x, std::shared_ptr<const std::vector<std::uint32_t>> map,
                  std::vector<std::size_t> out_shape) {
    if (shape_numel(out_shape) != map->size())
        throw ShapeError("gather: index map length " + std::to_string(map->size()) +
                         " does not match output shape " + shape_str(out_shape));
    TensorT<T> out = TensorT<T>::zeros(std::move(out_shape));
    for (std::size_t i = 0; i < map->size(); ++i) out.data()[i] = x.data()[(*map)[i]];
    if (detail::wants_grad<T>(x)) {
        auto xi = x.impl(), oi = out.impl();
        detail::record_op<T>(out, {xi}, [xi, oi, map] {
            auto& dx = detail::ensure_grad(xi);
            for (std::size_t i = 0; i < map->size(); ++i) dx[(*map)[i]] += oi->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// scalar-output / scalar-operand ops
// ---------------------------------------------------------------------------

// Mean absolute difference.
template <typename T>
TensorT<T> l1(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("l1: shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t n = a.numel();
    const T inv_n = T(1) / static_cast<T>(n);
    TensorT<T> out =
        TensorT<T>::scalar(kernels::sum_abs_diff_t(a.data().data(), b.data().data(), n) * inv_n);
    if (detail::wants_grad<T>(a, b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai, bi}, [ai, bi, oi, n, inv_n] {
            const T g = oi->grad[0] * inv_n;
            for (std::size_t i = 0; i < n; ++i) {
                const T d = ai->value[i] - bi->value[i];
                const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                if (ai->requires_grad) detail::ensure_grad(ai)[i] += g * s;
                if (bi->requires_grad) detail::ensure_grad(bi)[i] -= g * s;
            }
        });
    }
    return out;
}

// Scalar / scalar.
template <typename T>
TensorT<T> divide(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.numel() != 1 || b.numel() != 1)
        throw ShapeError("divide: expected scalars, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    TensorT<T> out = TensorT<T>::scalar(a.data()[0] / b.data()[0]);
    if (detail::wants_grad<T>(a, b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai, bi}, [ai, bi, oi] {
            const T g = oi->grad[0];
            const T av = ai->value[0], bv = bi->value[0];
            if (ai->requires_grad) detail::ensure_grad(ai)[0] += g / bv;
            if (bi->requires_grad) detail::ensure_grad(bi)[0] -= g * av / (bv * bv);
        });
    }
    return out;
}

// Scalar tensor raised to a constant power.
template <typename T>
TensorT<T> pow_scalar(const TensorT<T>& a, T p) {
    if (a.numel() != 1)
        throw ShapeError("pow_scalar: expected a scalar, got " + shape_str(a.shape()));
    TensorT<T> out = TensorT<T>::scalar(std::pow(a.data()[0], p));
    if (detail::wants_grad<T>(a)) {
        auto ai = a.impl(), oi = out.impl();
        detail::record_op<T>(out, {ai}, [ai, oi, p] {
            detail::ensure_grad(ai)[0] +=
                oi->grad[0] * p * std::pow(ai->value[0], p - T(1));
        });
    }
    return out;
}

// Elementwise product of a tensor with a scalar tensor (gradient into both).
template <typename T>
TensorT<T> mul_by_scalar(const TensorT<T>& x, const TensorT<T>& s) {
    if (s.numel() != 1)
        throw ShapeError("mul_by_scalar: scale must be a scalar, got " + shape_str(s.shape()));
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    kernels::scale_t(x.data().data(), s.data()[0], out.data().data(), x.numel());
    if (detail::wants_grad<T>(x, s)) {
        auto xi = x.impl(), si = s.impl(), oi = out.impl();
        detail::record_op<T>(out, {xi, si}, [xi, si, oi] {
            const std::size_t n = xi->value.size();
            if (xi->requires_grad) {
                auto& dx = detail::ensure_grad(xi);
                kernels::axpy_t(si->value[0], oi->grad.data(), dx.data(), n);
            }
            if (si->requires_grad)
                detail::ensure_grad(si)[0] +=
                    kernels::dot_t(oi->grad.data(), xi->value.data(), n);
        });
    }
    return out;
}

// Mean binary cross entropy of sigmoid(logits) against fixed 0/1 targets,
// computed in the numerically stable logits form.
template <typename T>
TensorT<T> bce_with_logits_mean(const TensorT<T>& logits, const std::vector<T>& targets) {
    if (logits.numel() != targets.size())
        throw ShapeError("bce_with_logits_mean: logits " + shape_str(logits.shape()) +
                         " vs " + std::to_string(targets.size()) + " targets");
    const std::size_t n = logits.numel();
    const T inv_n = T(1) / static_cast<T>(n);
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T s = logits.data()[i];
        acc += std::max(s, T(0)) - s * targets[i] + std::log1p(std::exp(-std::abs(s)));
    }
    TensorT<T> out = TensorT<T>::scalar(acc * inv_n);
    if (detail::wants_grad<T>(logits)) {
        auto li = logits.impl(), oi = out.impl();
        detail::record_op<T>(out, {li}, [li, oi, targets, inv_n] {
            auto& dl = detail::ensure_grad(li);
            const T g = oi->grad[0] * inv_n;
            for (std::size_t i = 0; i < li->value.size(); ++i) {
                const T s = li->value[i];
                const T sig = s >= T(0) ? T(1) / (T(1) + std::exp(-s))
                                        : std::exp(s) / (T(1) + std::exp(s));
                dl[i] += g * (sig - targets[i]);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// initializers
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> randn(std::vector<std::size_t> shape, Rng& rng, T stddev = T(1),
                 bool requires_grad = false) {
    TensorT<T> t = TensorT<T>::zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = static_cast<T>(rng.normal()) * stddev;
    return t;
}

// Normal(0, std) truncated to +-2 std by resampling.
template <typename T>
TensorT<T> trunc_normal(std::vector<std::size_t> shape, Rng& rng, T stddev,
                        bool requires_grad = false) {
    TensorT<T> t = TensorT<T>::zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) {
        double x = rng.normal();
        while (std::abs(x) > 2.0) x = rng.normal();
        v = static_cast<T>(x) * stddev;
    }
    return t;
}

} // namespace dae
