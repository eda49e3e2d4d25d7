#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <type_traits>

#include "tfe/kernels.hpp"
#include "tfe/tensor.hpp"

namespace tfe::ops {

template <class T>
inline T softplus(T x) {
    if (x > T(30)) return x;
    if (x < T(-30)) return std::exp(x);
    return std::log1p(std::exp(x));
}

// Exact GELU, x * Phi(x).
template <class T>
inline T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475)));
}

// out[i] = gamma[i] * x[i] / sqrt(mean(x^2) + eps)
template <class T>
void rmsnorm(std::span<const T> x, std::span<const T> gamma, T eps, std::span<T> out);

// Row-wise rmsnorm along the innermost axis of a 2-D or 3-D tensor.
template <class T>
TensorT<T> rmsnorm_rows(const TensorT<T>& x, const TensorT<T>& gamma, T eps = T(1e-6));

template <class T>
void softmax_inplace(std::span<T> x);

// Two-layer scale network for the query-aware scalable softmax. Weights are
// [out, in]; scale(q) = 1 + softplus(w2 . gelu(w1 q + b1) + b2), strictly > 1.
template <class T>
struct ScaleMlpT {
    TensorT<T> w1;  // [hidden, in]
    TensorT<T> b1;  // [hidden]
    TensorT<T> w2;  // [1, hidden]
    TensorT<T> b2;  // [1]

    T scale(std::span<const T> q) const {
        const std::size_t hidden = w1.dim(0);
        T out = b2(0);
        for (std::size_t h = 0; h < hidden; ++h) {
            const T pre = kern::dot(w1.data() + h * w1.dim(1), q.data(), q.size()) + b1(h);
            out += w2(0, h) * gelu(pre);
        }
        return T(1) + softplus(out);
    }
};

using ScaleMlp = ScaleMlpT<float>;

// softmax(scale(query) * log(n_context) * logits), in place.
template <class T>
void qassmax_inplace(std::span<T> logits, std::span<const T> query, const ScaleMlpT<T>& mlp,
                     std::size_t n_context);

// Convenience form returning a fresh probability vector.
template <class T>
std::vector<T> qassmax(std::span<const T> logits, std::span<const T> query,
                       const ScaleMlpT<T>& mlp, std::size_t n_context);

enum class SoftmaxMode { plain, qassmax };

// Scaled dot-product attention.
//   Q: [M, H, Dh], K/V: [N, Hkv, Dh] with Hkv in {1, H} (Hkv == 1: every query
//   head reads the shared KV head). Softmax runs over the N key axis. In
//   qassmax mode the logits of each query are rescaled by
//   scale(q) * log(n_context) before the softmax.
template <class T>
TensorT<T> attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                     SoftmaxMode mode = SoftmaxMode::plain,
                     const ScaleMlpT<T>* mlp = nullptr, std::size_t n_context = 0);

// Rotary position embedding over pairs (2i, 2i+1): angle = pos * base^(-2i/D).
// Preserves the Euclidean norm of every row.
template <class T>
TensorT<T> rope_apply(const TensorT<T>& x, std::span<const std::type_identity_t<T>> positions, T base);

// Y[M, out] = X[M, in] * W[out, in]^T (+ bias).
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias = nullptr);

}  // namespace tfe::ops
