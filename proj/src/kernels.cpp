#include "dae/kernels.hpp"

#include "dae/errors.hpp"

namespace dae::kernels {

// AVX2 variants live in kernels_avx2.cpp, compiled with -mavx2.
namespace avx2 {
void add(const float*, const float*, float*, std::size_t);
void sub(const float*, const float*, float*, std::size_t);
void mul(const float*, const float*, float*, std::size_t);
void scale(const float*, float, float*, std::size_t);
void axpy(float, const float*, float*, std::size_t);
float sum(const float*, std::size_t);
float dot(const float*, const float*, std::size_t);
float sum_abs_diff(const float*, const float*, std::size_t);
void matmul(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
void matmul_nt(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
void matmul_tn(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
void adamw_update(float*, float*, float*, const float*, std::size_t, float, float,
                  float, float, float, float, float);
} // namespace avx2

namespace {

struct Table {
    void (*add)(const float*, const float*, float*, std::size_t);
    void (*sub)(const float*, const float*, float*, std::size_t);
    void (*mul)(const float*, const float*, float*, std::size_t);
    void (*scale)(const float*, float, float*, std::size_t);
    void (*axpy)(float, const float*, float*, std::size_t);
    float (*sum)(const float*, std::size_t);
    float (*dot)(const float*, const float*, std::size_t);
    float (*sum_abs_diff)(const float*, const float*, std::size_t);
    void (*matmul)(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
    void (*matmul_nt)(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
    void (*matmul_tn)(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
    void (*adamw_update)(float*, float*, float*, const float*, std::size_t, float,
                         float, float, float, float, float, float);
};

constexpr Table kScalar{
    &add_ref<float>,      &sub_ref<float>,    &mul_ref<float>,
    &scale_ref<float>,    &axpy_ref<float>,   &sum_ref<float>,
    &dot_ref<float>,      &sum_abs_diff_ref<float>,
    &matmul_ref<float>,   &matmul_nt_ref<float>, &matmul_tn_ref<float>,
    &adamw_update_ref<float>,
};

constexpr Table kAvx2{
    &avx2::add,    &avx2::sub,    &avx2::mul,
    &avx2::scale,  &avx2::axpy,   &avx2::sum,
    &avx2::dot,    &avx2::sum_abs_diff,
    &avx2::matmul, &avx2::matmul_nt, &avx2::matmul_tn,
    &avx2::adamw_update,
};

struct State {
    Isa isa;
    const Table* table;
};

State& state() {
    static State s = [] {
        return cpu_has_avx2() ? State{Isa::avx2, &kAvx2} : State{Isa::scalar, &kScalar};
    }();
    return s;
}

} // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

Isa active_isa() { return state().isa; }

void set_isa(Isa isa) {
    if (isa == Isa::avx2 && !cpu_has_avx2())
        throw ParamError("kernel isa 'avx2' is not supported on this CPU");
    state() = (isa == Isa::avx2) ? State{Isa::avx2, &kAvx2} : State{Isa::scalar, &kScalar};
}

Isa parse_isa(const std::string& name) {
    if (name == "auto") return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
    if (name == "scalar") return Isa::scalar;
    if (name == "avx2") return Isa::avx2;
    throw ParamError("unknown kernel_isa '" + name + "' (expected auto, scalar or avx2)");
}

std::string isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void add(const float* a, const float* b, float* out, std::size_t n) { state().table->add(a, b, out, n); }
void sub(const float* a, const float* b, float* out, std::size_t n) { state().table->sub(a, b, out, n); }
void mul(const float* a, const float* b, float* out, std::size_t n) { state().table->mul(a, b, out, n); }
void scale(const float* a, float s, float* out, std::size_t n) { state().table->scale(a, s, out, n); }
void axpy(float a, const float* x, float* y, std::size_t n) { state().table->axpy(a, x, y, n); }
float sum(const float* a, std::size_t n) { return state().table->sum(a, n); }
float dot(const float* a, const float* b, std::size_t n) { return state().table->dot(a, b, n); }
float sum_abs_diff(const float* a, const float* b, std::size_t n) { return state().table->sum_abs_diff(a, b, n); }
void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
    state().table->matmul(a, b, c, m, k, n, accumulate);
}
void matmul_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
    state().table->matmul_nt(a, b, c, m, k, n, accumulate);
}
void matmul_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
    state().table->matmul_tn(a, b, c, m, k, n, accumulate);
}
void adamw_update(float* p, float* m, float* v, const float* g, std::size_t n,
                  float lr, float beta1, float beta2, float eps, float weight_decay,
                  float bc1, float bc2) {
    state().table->adamw_update(p, m, v, g, n, lr, beta1, beta2, eps, weight_decay, bc1, bc2);
}

} // namespace dae::kernels
