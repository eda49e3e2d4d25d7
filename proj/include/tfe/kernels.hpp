#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace tfe::kern {

// Kernel backends. Scalar is the reference; SIMD variants are selected at
// runtime when the CPU supports them and must agree with scalar up to
// reduction reassociation (covered by the equivalence tests).
enum class Backend { scalar, avx2, neon };

Backend active_backend();
void set_backend(Backend b);          // throws ConfigError if unavailable
std::vector<Backend> available_backends();
std::string backend_name(Backend b);

// Per-type kernel tables. Layout convention throughout: row-major, weights
// stored [out, in] so every reduction runs over contiguous memory.
template <class T>
struct Kernels {
    T (*dot)(const T*, const T*, std::size_t);
    T (*sum_squares)(const T*, std::size_t);
    void (*axpy)(T, const T*, T*, std::size_t);            // y += a*x
    void (*scale)(T*, std::size_t, T);                     // x *= s
    void (*add)(const T*, const T*, T*, std::size_t);      // out = a + b
    void (*mul)(const T*, const T*, T*, std::size_t);      // out = a * b
    // C[m,n] = A[m,k] * B[n,k]^T
    void (*matmul_nt)(const T*, const T*, T*, std::size_t, std::size_t, std::size_t);
};

template <class T>
const Kernels<T>& table();

template <class T>
inline T dot(const T* a, const T* b, std::size_t n) { return table<T>().dot(a, b, n); }

template <class T>
inline T sum_squares(const T* x, std::size_t n) { return table<T>().sum_squares(x, n); }

template <class T>
inline void axpy(T a, const T* x, T* y, std::size_t n) { table<T>().axpy(a, x, y, n); }

template <class T>
inline void scale(T* x, std::size_t n, T s) { table<T>().scale(x, n, s); }

template <class T>
inline void add(const T* a, const T* b, T* out, std::size_t n) { table<T>().add(a, b, out, n); }

template <class T>
inline void mul(const T* a, const T* b, T* out, std::size_t n) { table<T>().mul(a, b, out, n); }

template <class T>
inline void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
    table<T>().matmul_nt(a, b, c, m, n, k);
}

// Scalar reference implementations, exposed for equivalence testing.
namespace scalar {
template <class T> T dot(const T* a, const T* b, std::size_t n);
template <class T> T sum_squares(const T* x, std::size_t n);
template <class T> void axpy(T a, const T* x, T* y, std::size_t n);
template <class T> void scale(T* x, std::size_t n, T s);
template <class T> void add(const T* a, const T* b, T* out, std::size_t n);
template <class T> void mul(const T* a, const T* b, T* out, std::size_t n);
template <class T> void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k);
}  // namespace scalar

}  // namespace tfe::kern
