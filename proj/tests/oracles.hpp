#pragma once

// Independent float64 reference implementations used as test oracles. These
// are deliberately written as direct scalar loops over the defining formulas
// and share no code with the library kernels or stages.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

inline std::vector<double> rmsnorm(const std::vector<double>& x, const std::vector<double>& gamma,
                                   double eps) {
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = gamma[i] * x[i] / std::sqrt(ms + eps);
    return out;
}

inline std::vector<double> softmax(std::vector<double> x) {
    double m = x[0];
    for (double v : x) m = std::max(m, v);
    double total = 0.0;
    for (double& v : x) {
        v = std::exp(v - m);
        total += v;
    }
    for (double& v : x) v /= total;
    return x;
}

inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Two-layer scale net evaluated by hand: 1 + softplus(w2 . gelu(w1 q + b1) + b2).
inline double scale_mlp(const std::vector<double>& q, const std::vector<double>& w1,
                        const std::vector<double>& b1, const std::vector<double>& w2, double b2) {
    const std::size_t hidden = b1.size(), in = q.size();
    double out = b2;
    for (std::size_t h = 0; h < hidden; ++h) {
        double pre = b1[h];
        for (std::size_t i = 0; i < in; ++i) pre += w1[h * in + i] * q[i];
        out += w2[h] * gelu(pre);
    }
    return 1.0 + softplus(out);
}

// Triple-nested-loop attention. q: [m][h][dh], k/v: [n][hkv][dh].
// When qass_scales is non-null, logits of query (i,h) are multiplied by
// qass_scales[i*heads + h] * log(n_context) before the softmax.
inline std::vector<double> attention(const std::vector<double>& q, const std::vector<double>& k,
                                     const std::vector<double>& v, std::size_t m,
                                     std::size_t heads, std::size_t dh, std::size_t n,
                                     std::size_t kv_heads,
                                     const std::vector<double>* qass_scales = nullptr,
                                     std::size_t n_context = 0) {
    std::vector<double> out(m * heads * dh, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t kvh = (kv_heads == 1) ? 0 : h;
            std::vector<double> logits(n, 0.0);
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t d = 0; d < dh; ++d) {
                    acc += q[(i * heads + h) * dh + d] * k[(j * kv_heads + kvh) * dh + d];
                }
                logits[j] = acc / std::sqrt(static_cast<double>(dh));
            }
            if (qass_scales != nullptr) {
                const double s =
                    (*qass_scales)[i * heads + h] * std::log(static_cast<double>(n_context));
                for (double& l : logits) l *= s;
            }
            const std::vector<double> alpha = softmax(logits);
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t d = 0; d < dh; ++d) {
                    out[(i * heads + h) * dh + d] += alpha[j] * v[(j * kv_heads + kvh) * dh + d];
                }
            }
        }
    }
    return out;
}

inline std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                                      double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> out(n);
    for (double& v : out) v = dist(rng);
    return out;
}

}  // namespace oracle
