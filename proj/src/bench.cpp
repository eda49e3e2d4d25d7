#include "tfe/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "tfe/rng.hpp"

namespace tfe::bench {

std::string bench_csv_header() { return "n_train,n_test,n_features,mode,wall_ms,peak_bytes,seed"; }

std::string bench_csv_row(const BenchRecord& rec) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%s,%.3f,%lld,%llu", rec.n_train, rec.n_test,
                  rec.n_features, rec.mode.c_str(), rec.wall_ms,
                  static_cast<long long>(rec.peak_bytes),
                  static_cast<unsigned long long>(rec.seed));
    return buf;
}

double time_median_ms(int warmup, int reps, const std::function<void()>& f) {
    for (int i = 0; i < warmup; ++i) f();
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(reps));
    for (int i = 0; i < reps; ++i) {
        const auto start = std::chrono::steady_clock::now();
        f();
        const auto stop = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

namespace {

// Linear-interpolated empirical quantile of a sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double q) {
    const double h = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double w = h - static_cast<double>(lo);
    return sorted[lo] * (1.0 - w) + sorted[hi] * w;
}

}  // namespace

std::vector<std::uint32_t> build_many_class_benchmark(std::span<const double> y, std::size_t k,
                                                      double alpha, std::size_t min_bin,
                                                      std::uint64_t seed, std::size_t* k_out) {
    if (y.empty()) throw DimError("many-class benchmark: empty targets");
    if (k < 1) throw ConfigError("many-class benchmark: k must be >= 1");

    CounterRng rng(seed, 0xBE9C);
    const auto widths = rng.dirichlet(k, alpha);

    std::vector<double> sorted(y.begin(), y.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> edges;  // k - 1 interior edges
    double cum = 0.0;
    for (std::size_t j = 0; j + 1 < k; ++j) {
        cum += widths[j];
        edges.push_back(quantile_sorted(sorted, std::min(cum, 1.0)));
    }

    // Initial bin per row: index of the first interior edge above the value.
    std::vector<std::uint32_t> bins(y.size());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < y.size(); ++i) {
        const auto it = std::upper_bound(edges.begin(), edges.end(), y[i]);
        bins[i] = static_cast<std::uint32_t>(it - edges.begin());
        ++counts[bins[i]];
    }

    // Merge undersized bins into the adjacent bin with fewer members
    // (ties toward the left); empty bins dissolve the same way.
    std::vector<std::uint32_t> remap(k);
    std::iota(remap.begin(), remap.end(), 0u);
    std::vector<bool> alive(k, true);
    auto left_of = [&](std::size_t b) -> std::ptrdiff_t {
        for (std::ptrdiff_t j = static_cast<std::ptrdiff_t>(b) - 1; j >= 0; --j) {
            if (alive[static_cast<std::size_t>(j)]) return j;
        }
        return -1;
    };
    auto right_of = [&](std::size_t b) -> std::ptrdiff_t {
        for (std::size_t j = b + 1; j < k; ++j) {
            if (alive[j]) return static_cast<std::ptrdiff_t>(j);
        }
        return -1;
    };
    for (;;) {
        std::size_t worst = k;
        std::size_t worst_count = min_bin;
        std::size_t n_alive = 0;
        for (std::size_t b = 0; b < k; ++b) {
            if (!alive[b]) continue;
            ++n_alive;
            if (counts[b] < worst_count) {
                worst_count = counts[b];
                worst = b;
            }
        }
        if (worst == k || n_alive <= 1) break;
        const std::ptrdiff_t left = left_of(worst);
        const std::ptrdiff_t right = right_of(worst);
        std::size_t target;
        if (left < 0) {
            target = static_cast<std::size_t>(right);
        } else if (right < 0) {
            target = static_cast<std::size_t>(left);
        } else {
            target = counts[static_cast<std::size_t>(left)] <=
                             counts[static_cast<std::size_t>(right)]
                         ? static_cast<std::size_t>(left)
                         : static_cast<std::size_t>(right);
        }
        counts[target] += counts[worst];
        counts[worst] = 0;
        alive[worst] = false;
        for (std::size_t b = 0; b < k; ++b) {
            if (remap[b] == worst) remap[b] = static_cast<std::uint32_t>(target);
        }
    }

    // Contiguous surviving ids, then a random permutation of those ids.
    std::vector<std::uint32_t> compact(k, 0);
    std::uint32_t next = 0;
    for (std::size_t b = 0; b < k; ++b) {
        if (alive[b]) compact[b] = next++;
    }
    std::vector<std::uint32_t> perm(next);
    std::iota(perm.begin(), perm.end(), 0u);
    CounterRng perm_rng(seed, 0xBE9D);
    perm_rng.shuffle(std::span<std::uint32_t>(perm));

    for (std::uint32_t& b : bins) b = perm[compact[remap[b]]];
    if (k_out != nullptr) *k_out = next;
    return bins;
}

std::vector<double> normalize_scores(std::span<const ScoreRecord> records,
                                     bool lower_is_better) {
    std::map<std::pair<std::string, std::size_t>, std::pair<double, double>> ranges;
    for (const ScoreRecord& r : records) {
        const auto key = std::make_pair(r.dataset, r.fold);
        auto it = ranges.find(key);
        if (it == ranges.end()) {
            ranges.emplace(key, std::make_pair(r.score, r.score));
        } else {
            it->second.first = std::min(it->second.first, r.score);
            it->second.second = std::max(it->second.second, r.score);
        }
    }
    std::vector<double> out;
    out.reserve(records.size());
    for (const ScoreRecord& r : records) {
        const auto& [lo, hi] = ranges.at({r.dataset, r.fold});
        double s = hi > lo ? (r.score - lo) / (hi - lo) : 0.5;
        if (lower_is_better && hi > lo) s = 1.0 - s;
        out.push_back(s);
    }
    return out;
}

double improvability(double err, double best_err) {
    if (!(best_err > 0.0)) throw DimError("improvability: best error must be positive");
    if (err < best_err) throw DimError("improvability: error below the best error");
    return (err - best_err) / err * 100.0;
}

}  // namespace tfe::bench
