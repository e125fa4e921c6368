#pragma once

#include <cmath>
#include <cstddef>
#include <string>

namespace dae::kernels {

// ---------------------------------------------------------------------------
// Scalar reference kernels. These are the semantic ground truth; the f32
// entry points below may route to SIMD variants that must match them (bit
// exactly for elementwise kernels, within rounding for reductions).
// ---------------------------------------------------------------------------

template <typename T>
void add_ref(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub_ref(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul_ref(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void scale_ref(const T* a, T s, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

// y += a * x
template <typename T>
void axpy_ref(T a, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
T sum_ref(const T* a, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

template <typename T>
T dot_ref(const T* a, const T* b, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
T sum_abs_diff_ref(const T* a, const T* b, std::size_t n) {
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(a[i] - b[i]);
    return acc;
}

// C [m x n] = (or +=) A [m x k] * B [k x n]. The ikj loop keeps the
// k-accumulation order of every output element identical to the
// j-vectorized SIMD variant.
template <typename T>
void matmul_ref(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                std::size_t n, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T aik = a[i * k + kk];
            const T* brow = b + kk * n;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C [m x n] = (or +=) A [m x k] * B^T, with B stored [n x k].
template <typename T>
void matmul_nt_ref(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                   std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = T(0);
            const T* arow = a + i * k;
            const T* brow = b + j * k;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            if (accumulate)
                c[i * n + j] += acc;
            else
                c[i * n + j] = acc;
        }
    }
}

// C [m x n] = (or +=) A^T * B, with A stored [k x m], B stored [k x n].
template <typename T>
void matmul_tn_ref(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                   std::size_t n, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
        const T* arow = a + kk * m;
        const T* brow = b + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T aki = arow[i];
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
        }
    }
}

// One decoupled-weight-decay Adam step over a parameter buffer.
// bc1/bc2 are the bias corrections 1/(1-beta1^t) and 1/(1-beta2^t).
template <typename T>
void adamw_update_ref(T* p, T* m, T* v, const T* g, std::size_t n, T lr, T beta1,
                      T beta2, T eps, T weight_decay, T bc1, T bc2) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * (g[i] * g[i]);
        const T mhat = m[i] * bc1;
        const T vhat = v[i] * bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
        p[i] -= lr * weight_decay * p[i];
    }
}

// ---------------------------------------------------------------------------
// Runtime-dispatched f32 entry points. The active implementation is chosen
// once from CPU capabilities and can be overridden (tests exercise both).
// ---------------------------------------------------------------------------

enum class Isa { scalar, avx2 };

bool cpu_has_avx2();
Isa active_isa();
void set_isa(Isa isa);       // throws ParamError if unsupported on this CPU
Isa parse_isa(const std::string& name); // "auto" | "scalar" | "avx2"
std::string isa_name(Isa isa);

void add(const float* a, const float* b, float* out, std::size_t n);
void sub(const float* a, const float* b, float* out, std::size_t n);
void mul(const float* a, const float* b, float* out, std::size_t n);
void scale(const float* a, float s, float* out, std::size_t n);
void axpy(float a, const float* x, float* y, std::size_t n);
float sum(const float* a, std::size_t n);
float dot(const float* a, const float* b, std::size_t n);
float sum_abs_diff(const float* a, const float* b, std::size_t n);
void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate);
void matmul_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void matmul_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void adamw_update(float* p, float* m, float* v, const float* g, std::size_t n,
                  float lr, float beta1, float beta2, float eps, float weight_decay,
                  float bc1, float bc2);

// Convenience for the generic tensor code: route to the dispatched f32 path
// for float and to the reference for every other scalar type.
template <typename T>
void add_t(const T* a, const T* b, T* out, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) add(a, b, out, n);
    else add_ref(a, b, out, n);
}
template <typename T>
void sub_t(const T* a, const T* b, T* out, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) sub(a, b, out, n);
    else sub_ref(a, b, out, n);
}
template <typename T>
void mul_t(const T* a, const T* b, T* out, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) mul(a, b, out, n);
    else mul_ref(a, b, out, n);
}
template <typename T>
void scale_t(const T* a, T s, T* out, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) scale(a, s, out, n);
    else scale_ref(a, s, out, n);
}
template <typename T>
void axpy_t(T a, const T* x, T* y, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) axpy(a, x, y, n);
    else axpy_ref(a, x, y, n);
}
template <typename T>
T sum_t(const T* a, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) return sum(a, n);
    else return sum_ref(a, n);
}
template <typename T>
T dot_t(const T* a, const T* b, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) return dot(a, b, n);
    else return dot_ref(a, b, n);
}
template <typename T>
T sum_abs_diff_t(const T* a, const T* b, std::size_t n) {
    if constexpr (std::is_same_v<T, float>) return sum_abs_diff(a, b, n);
    else return sum_abs_diff_ref(a, b, n);
}
template <typename T>
void matmul_t(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
              std::size_t n, bool accumulate) {
    if constexpr (std::is_same_v<T, float>) matmul(a, b, c, m, k, n, accumulate);
    else matmul_ref(a, b, c, m, k, n, accumulate);
}
template <typename T>
void matmul_nt_t(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n, bool accumulate) {
    if constexpr (std::is_same_v<T, float>) matmul_nt(a, b, c, m, k, n, accumulate);
    else matmul_nt_ref(a, b, c, m, k, n, accumulate);
}
template <typename T>
void matmul_tn_t(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                 std::size_t n, bool accumulate) {
    if constexpr (std::is_same_v<T, float>) matmul_tn(a, b, c, m, k, n, accumulate);
    else matmul_tn_ref(a, b, c, m, k, n, accumulate);
}
template <typename T>
void adamw_update_t(T* p, T* m, T* v, const T* g, std::size_t n, T lr, T beta1,
                    T beta2, T eps, T weight_decay, T bc1, T bc2) {
    if constexpr (std::is_same_v<T, float>)
        adamw_update(p, m, v, g, n, lr, beta1, beta2, eps, weight_decay, bc1, bc2);
    else
        adamw_update_ref(p, m, v, g, n, lr, beta1, beta2, eps, weight_decay, bc1, bc2);
}

} // namespace dae::kernels
