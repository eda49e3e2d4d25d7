#include "tfe/ops.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <vector>

#include "tfe/error.hpp"

namespace tfe::ops {

template <class T>
void rmsnorm(std::span<const T> x, std::span<const T> gamma, T eps, std::span<T> out) {
    if (x.size() != gamma.size() || x.size() != out.size()) {
        throw DimError("rmsnorm: length mismatch");
    }
    if (!(eps > T(0))) throw DimError("rmsnorm: eps must be positive");
    const std::size_t n = x.size();
    const T mean_sq = kern::sum_squares(x.data(), n) / static_cast<T>(n);
    const T inv = T(1) / std::sqrt(mean_sq + eps);
    for (std::size_t i = 0; i < n; ++i) out[i] = gamma[i] * x[i] * inv;
}

template <class T>
TensorT<T> rmsnorm_rows(const TensorT<T>& x, const TensorT<T>& gamma, T eps) {
    const std::size_t d = x.shape().back();
    if (gamma.numel() != d) throw DimError("rmsnorm_rows: gamma length mismatch");
    TensorT<T> out(x.shape());
    const std::size_t rows = x.numel() / d;
    for (std::size_t r = 0; r < rows; ++r) {
        rmsnorm<T>({x.data() + r * d, d}, gamma.values(), eps, {out.data() + r * d, d});
    }
    return out;
}

template <class T>
void softmax_inplace(std::span<T> x) {
    if (x.empty()) throw DimError("softmax: empty input");
    T m = x[0];
    for (T v : x) m = std::max(m, v);
    T total = T(0);
    for (T& v : x) {
        v = std::exp(v - m);
        total += v;
    }
    kern::scale(x.data(), x.size(), T(1) / total);
}

template <class T>
void qassmax_inplace(std::span<T> logits, std::span<const T> query, const ScaleMlpT<T>& mlp,
                     std::size_t n_context) {
    if (logits.empty()) throw DimError("qassmax: empty input");
    if (n_context < 1) throw DimError("qassmax: n_context must be >= 1");
    const T s = mlp.scale(query) * std::log(static_cast<T>(n_context));
    kern::scale(logits.data(), logits.size(), s);
    softmax_inplace(logits);
}

template <class T>
std::vector<T> qassmax(std::span<const T> logits, std::span<const T> query,
                       const ScaleMlpT<T>& mlp, std::size_t n_context) {
    std::vector<T> out(logits.begin(), logits.end());
    qassmax_inplace<T>(out, query, mlp, n_context);
    return out;
}

template <class T>
TensorT<T> attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                     SoftmaxMode mode, const ScaleMlpT<T>* mlp, std::size_t n_context) {
    if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
        throw DimError("attention: expected [M,H,Dh] / [N,Hkv,Dh] operands");
    }
    const std::size_t m = q.dim(0), heads = q.dim(1), dh = q.dim(2);
    const std::size_t n = k.dim(0), kv_heads = k.dim(1);
    if (dh == 0) throw ConfigError("attention: head dim must be positive");
    if (n == 0) throw DimError("attention: empty context");
    if (kv_heads != 1 && kv_heads != heads) {
        throw ConfigError("attention: KV head count must be 1 or equal to query heads");
    }
    if (k.dim(2) != dh || v.dim(2) != dh || v.dim(0) != n || v.dim(1) != kv_heads) {
        throw DimError("attention: K/V shape mismatch");
    }
    if (mode == SoftmaxMode::qassmax && (mlp == nullptr || n_context == 0)) {
        throw ConfigError("attention: qassmax mode requires a scale network and context size");
    }

    // Reductions over the key axis accumulate in double so the result is
    // insensitive to key order and chunk boundaries at the f32 level.
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    TensorT<T> out({m, heads, dh});
    DTensor logits({n});
    std::vector<double> acc(dh);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t kvh = (kv_heads == 1) ? 0 : h;
            const T* qv = q.data() + (i * heads + h) * dh;
            double scale = 1.0;
            if (mode == SoftmaxMode::qassmax) {
                scale = static_cast<double>(mlp->scale({qv, dh})) *
                        std::log(static_cast<double>(n_context));
            }
            double max_logit = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < n; ++j) {
                const double l = static_cast<double>(
                                     kern::dot(qv, k.data() + (j * kv_heads + kvh) * dh, dh) *
                                     inv_sqrt) *
                                 scale;
                logits(j) = l;
                max_logit = std::max(max_logit, l);
            }
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                logits(j) = std::exp(logits(j) - max_logit);
                total += logits(j);
            }
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                const double alpha = logits(j) / total;
                const T* vj = v.data() + (j * kv_heads + kvh) * dh;
                for (std::size_t d = 0; d < dh; ++d) {
                    acc[d] += alpha * static_cast<double>(vj[d]);
                }
            }
            T* dst = out.data() + (i * heads + h) * dh;
            for (std::size_t d = 0; d < dh; ++d) dst[d] = static_cast<T>(acc[d]);
        }
    }
    return out;
}

template <class T>
TensorT<T> rope_apply(const TensorT<T>& x, std::span<const std::type_identity_t<T>> positions, T base) {
    if (x.rank() != 2) throw DimError("rope_apply: expected [T, D]");
    const std::size_t rows = x.dim(0), d = x.dim(1);
    if (d % 2 != 0) throw ConfigError("rope_apply: dimension must be even");
    if (positions.size() != rows) throw DimError("rope_apply: positions length mismatch");
    if (!(base > T(0))) throw ConfigError("rope_apply: base must be positive");

    TensorT<T> out({rows, d});
    for (std::size_t t = 0; t < rows; ++t) {
        const T* src = x.data() + t * d;
        T* dst = out.data() + t * d;
        for (std::size_t i = 0; i < d / 2; ++i) {
            const T theta = positions[t] *
                std::pow(base, -static_cast<T>(2 * i) / static_cast<T>(d));
            const T c = std::cos(theta), s = std::sin(theta);
            dst[2 * i] = c * src[2 * i] - s * src[2 * i + 1];
            dst[2 * i + 1] = s * src[2 * i] + c * src[2 * i + 1];
        }
    }
    return out;
}

template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias) {
    const std::size_t in = w.dim(1), out_dim = w.dim(0);
    if (x.shape().back() != in) throw DimError("linear: input width mismatch");
    const std::size_t rows = x.numel() / in;
    TensorT<T> y({rows, out_dim});
    kern::matmul_nt(x.data(), w.data(), y.data(), rows, out_dim, in);
    if (bias != nullptr) {
        if (bias->numel() != out_dim) throw DimError("linear: bias length mismatch");
        for (std::size_t r = 0; r < rows; ++r) {
            kern::add(y.data() + r * out_dim, bias->data(), y.data() + r * out_dim, out_dim);
        }
    }
    return y;
}

#define TFE_INSTANTIATE_OPS(T)                                                            \
    template void rmsnorm<T>(std::span<const T>, std::span<const T>, T, std::span<T>);    \
    template TensorT<T> rmsnorm_rows<T>(const TensorT<T>&, const TensorT<T>&, T);         \
    template void softmax_inplace<T>(std::span<T>);                                       \
    template void qassmax_inplace<T>(std::span<T>, std::span<const T>,                     \
                                     const ScaleMlpT<T>&, std::size_t);                   \
    template std::vector<T> qassmax<T>(std::span<const T>, std::span<const T>,            \
                                       const ScaleMlpT<T>&, std::size_t);                 \
    template TensorT<T> attention<T>(const TensorT<T>&, const TensorT<T>&,                \
                                     const TensorT<T>&, SoftmaxMode, const ScaleMlpT<T>*, \
                                     std::size_t);                                        \
    template TensorT<T> rope_apply<T>(const TensorT<T>&, std::span<const std::type_identity_t<T>>, T);          \
    template TensorT<T> linear<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>*);

TFE_INSTANTIATE_OPS(float)
TFE_INSTANTIATE_OPS(double)

#undef TFE_INSTANTIATE_OPS

}  // namespace tfe::ops
