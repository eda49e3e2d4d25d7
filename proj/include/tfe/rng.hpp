#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace tfe {

// Counter-based PRNG: the splitmix64 finalizer applied to (key, counter).
// Draw i of stream s under seed k is a pure function of (k, s, i), so
// regeneration is byte-identical regardless of call interleaving, and
// per-node substreams are independent by construction.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : key_(mix(mix(seed + kGolden) ^ mix(stream * kGolden + 0x6a09e667f3bcc909ull))) {}

    static std::uint64_t mix(std::uint64_t z) noexcept {
        z += kGolden;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() noexcept { return mix(key_ + (++counter_) * kGolden); }

    // Uniform in [0, 1), 53-bit mantissa.
    double next_double() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(next_double() * static_cast<double>(n)) % n;
    }

    bool bernoulli(double p) noexcept { return next_double() < p; }

    // Box-Muller with a cached spare.
    double normal(double mu = 0.0, double sigma = 1.0) noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return mu + sigma * spare_;
        }
        const double u1 = 1.0 - next_double();  // (0, 1]
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mu + sigma * r * std::cos(theta);
    }

    // Marsaglia-Tsang. alpha > 0.
    double gamma(double alpha) noexcept {
        if (alpha < 1.0) {
            const double u = next_double();
            return gamma(alpha + 1.0) * std::pow(u > 0 ? u : 1e-300, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = next_double();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    std::vector<double> dirichlet(std::size_t k, double alpha) noexcept {
        std::vector<double> w(k);
        double total = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            w[i] = gamma(alpha);
            total += w[i];
        }
        if (total <= 0.0) total = 1.0;
        for (double& v : w) v /= total;
        return w;
    }

    template <class T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = uniform_int(i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace tfe
