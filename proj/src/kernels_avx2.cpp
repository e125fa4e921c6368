// AVX2 kernel variants. This translation unit is the only one compiled with
// -mavx2; everything here is reached through the dispatch table in
// kernels.cpp after a runtime CPU check.
//
// Elementwise kernels and the j-vectorized matmul/matmul_tn perform the same
// rounding steps in the same order as the scalar references and must match
// them bit for bit. The reductions (sum, dot, sum_abs_diff, matmul_nt) fold
// eight partial accumulators and only agree with the references to rounding.

#include <immintrin.h>

#include <cmath>
#include <cstddef>

namespace dae::kernels::avx2 {

namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
}

inline __m256 abs_ps(__m256 v) {
    const __m256 mask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
    return _mm256_and_ps(v, mask);
}

} // namespace

void add(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const float* a, float s, float* out, std::size_t n) {
    const __m256 vs = _mm256_set1_ps(s);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy(float a, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

float sum(const float* a, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(a + i));
    float total = hsum(acc);
    for (; i < n; ++i) total += a[i];
    return total;
}

float dot(const float* a, const float* b, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    float total = hsum(acc);
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

float sum_abs_diff(const float* a, const float* b, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        acc = _mm256_add_ps(acc, abs_ps(_mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i))));
    float total = hsum(acc);
    for (; i < n; ++i) total += std::abs(a[i] - b[i]);
    return total;
}

void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0f;
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const float aik = a[i * k + kk];
            const __m256 va = _mm256_set1_ps(aik);
            const float* brow = b + kk * n;
            float* crow = c + i * n;
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                const __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(brow + j));
                _mm256_storeu_ps(crow + j, _mm256_add_ps(_mm256_loadu_ps(crow + j), prod));
            }
            for (; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

void matmul_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const float* brow = b + j * k;
            __m256 acc = _mm256_setzero_ps();
            std::size_t kk = 0;
            for (; kk + 8 <= k; kk += 8)
                acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(arow + kk),
                                                       _mm256_loadu_ps(brow + kk)));
            float total = hsum(acc);
            for (; kk < k; ++kk) total += arow[kk] * brow[kk];
            if (accumulate)
                c[i * n + j] += total;
            else
                c[i * n + j] = total;
        }
    }
}

void matmul_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0f;
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
        const float* arow = a + kk * m;
        const float* brow = b + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const float aki = arow[i];
            const __m256 va = _mm256_set1_ps(aki);
            float* crow = c + i * n;
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                const __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(brow + j));
                _mm256_storeu_ps(crow + j, _mm256_add_ps(_mm256_loadu_ps(crow + j), prod));
            }
            for (; j < n; ++j) crow[j] += aki * brow[j];
        }
    }
}

void adamw_update(float* p, float* m, float* v, const float* g, std::size_t n,
                  float lr, float beta1, float beta2, float eps, float weight_decay,
                  float bc1, float bc2) {
    const __m256 vb1 = _mm256_set1_ps(beta1);
    const __m256 vb2 = _mm256_set1_ps(beta2);
    const __m256 vomb1 = _mm256_set1_ps(1.0f - beta1);
    const __m256 vomb2 = _mm256_set1_ps(1.0f - beta2);
    const __m256 vbc1 = _mm256_set1_ps(bc1);
    const __m256 vbc2 = _mm256_set1_ps(bc2);
    const __m256 veps = _mm256_set1_ps(eps);
    const __m256 vlr = _mm256_set1_ps(lr);
    const __m256 vlrwd = _mm256_set1_ps(lr * weight_decay);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 vg = _mm256_loadu_ps(g + i);
        __m256 vm = _mm256_loadu_ps(m + i);
        __m256 vv = _mm256_loadu_ps(v + i);
        vm = _mm256_add_ps(_mm256_mul_ps(vb1, vm), _mm256_mul_ps(vomb1, vg));
        vv = _mm256_add_ps(_mm256_mul_ps(vb2, vv), _mm256_mul_ps(vomb2, _mm256_mul_ps(vg, vg)));
        _mm256_storeu_ps(m + i, vm);
        _mm256_storeu_ps(v + i, vv);
        const __m256 mhat = _mm256_mul_ps(vm, vbc1);
        const __m256 vhat = _mm256_mul_ps(vv, vbc2);
        const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), veps);
        __m256 vp = _mm256_loadu_ps(p + i);
        vp = _mm256_sub_ps(vp, _mm256_mul_ps(vlr, _mm256_div_ps(mhat, denom)));
        vp = _mm256_sub_ps(vp, _mm256_mul_ps(vlrwd, vp));
        _mm256_storeu_ps(p + i, vp);
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0f - beta2) * (g[i] * g[i]);
        const float mhat = m[i] * bc1;
        const float vhat = v[i] * bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
        p[i] -= lr * weight_decay * p[i];
    }
}

} // namespace dae::kernels::avx2
