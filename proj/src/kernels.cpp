#include "tfe/kernels.hpp"

#include <algorithm>
#include <cstdlib>

#include "tfe/error.hpp"

namespace tfe::kern {

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
float dot_f32(const float*, const float*, std::size_t);
double dot_f64(const double*, const double*, std::size_t);
float sum_squares_f32(const float*, std::size_t);
double sum_squares_f64(const double*, std::size_t);
void axpy_f32(float, const float*, float*, std::size_t);
void axpy_f64(double, const double*, double*, std::size_t);
void scale_f32(float*, std::size_t, float);
void scale_f64(double*, std::size_t, double);
void add_f32(const float*, const float*, float*, std::size_t);
void add_f64(const double*, const double*, double*, std::size_t);
void mul_f32(const float*, const float*, float*, std::size_t);
void mul_f64(const double*, const double*, double*, std::size_t);
void matmul_nt_f32(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
void matmul_nt_f64(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
float dot_f32(const float*, const float*, std::size_t);
float sum_squares_f32(const float*, std::size_t);
void axpy_f32(float, const float*, float*, std::size_t);
void scale_f32(float*, std::size_t, float);
void add_f32(const float*, const float*, float*, std::size_t);
void mul_f32(const float*, const float*, float*, std::size_t);
void matmul_nt_f32(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
}  // namespace neon
#endif

namespace {

constexpr Kernels<float> kScalarF32{
    scalar::dot<float>, scalar::sum_squares<float>, scalar::axpy<float>,
    scalar::scale<float>, scalar::add<float>, scalar::mul<float>, scalar::matmul_nt<float>};

constexpr Kernels<double> kScalarF64{
    scalar::dot<double>, scalar::sum_squares<double>, scalar::axpy<double>,
    scalar::scale<double>, scalar::add<double>, scalar::mul<double>, scalar::matmul_nt<double>};

#if defined(__x86_64__) || defined(_M_X64)
constexpr Kernels<float> kAvx2F32{
    avx2::dot_f32, avx2::sum_squares_f32, avx2::axpy_f32,
    avx2::scale_f32, avx2::add_f32, avx2::mul_f32, avx2::matmul_nt_f32};

constexpr Kernels<double> kAvx2F64{
    avx2::dot_f64, avx2::sum_squares_f64, avx2::axpy_f64,
    avx2::scale_f64, avx2::add_f64, avx2::mul_f64, avx2::matmul_nt_f64};
#endif

#if defined(__aarch64__)
// f64 lanes fall back to scalar on NEON; only the f32 hot path is vectorized.
constexpr Kernels<float> kNeonF32{
    neon::dot_f32, neon::sum_squares_f32, neon::axpy_f32,
    neon::scale_f32, neon::add_f32, neon::mul_f32, neon::matmul_nt_f32};
#endif

bool backend_available(Backend b) {
    switch (b) {
        case Backend::scalar:
            return true;
        case Backend::avx2:
#if defined(__x86_64__) || defined(_M_X64)
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
            return false;
#endif
        case Backend::neon:
#if defined(__aarch64__)
            return true;
#else
            return false;
#endif
    }
    return false;
}

Backend pick_default() {
    if (const char* env = std::getenv("TFE_KERNEL")) {
        std::string v(env);
        if (v == "scalar") return Backend::scalar;
        if (v == "avx2" && backend_available(Backend::avx2)) return Backend::avx2;
        if (v == "neon" && backend_available(Backend::neon)) return Backend::neon;
    }
    if (backend_available(Backend::avx2)) return Backend::avx2;
    if (backend_available(Backend::neon)) return Backend::neon;
    return Backend::scalar;
}

const Kernels<float>* g_f32 = nullptr;
const Kernels<double>* g_f64 = nullptr;
Backend g_backend = Backend::scalar;

void apply_backend(Backend b) {
    g_backend = b;
    switch (b) {
#if defined(__x86_64__) || defined(_M_X64)
        case Backend::avx2:
            g_f32 = &kAvx2F32;
            g_f64 = &kAvx2F64;
            return;
#endif
#if defined(__aarch64__)
        case Backend::neon:
            g_f32 = &kNeonF32;
            g_f64 = &kScalarF64;
            return;
#endif
        default:
            g_f32 = &kScalarF32;
            g_f64 = &kScalarF64;
            return;
    }
}

struct Init {
    Init() { apply_backend(pick_default()); }
};
Init g_init;

}  // namespace

Backend active_backend() { return g_backend; }

void set_backend(Backend b) {
    if (!backend_available(b)) {
        throw ConfigError("kernel backend not available on this CPU: " + backend_name(b));
    }
    apply_backend(b);
}

std::vector<Backend> available_backends() {
    std::vector<Backend> out{Backend::scalar};
    if (backend_available(Backend::avx2)) out.push_back(Backend::avx2);
    if (backend_available(Backend::neon)) out.push_back(Backend::neon);
    return out;
}

std::string backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
        case Backend::neon: return "neon";
    }
    return "?";
}

template <>
const Kernels<float>& table<float>() { return *g_f32; }

template <>
const Kernels<double>& table<double>() { return *g_f64; }

}  // namespace tfe::kern
