#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tfe/error.hpp"

namespace tfe::bench {

struct BenchRecord {
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    std::size_t n_features = 0;
    std::string mode;
    double wall_ms = 0.0;
    std::int64_t peak_bytes = 0;
    std::uint64_t seed = 0;
};

std::string bench_csv_header();
std::string bench_csv_row(const BenchRecord& rec);

// Median wall time over `reps` runs after `warmup` discarded runs.
double time_median_ms(int warmup, int reps, const std::function<void()>& f);

// Converts continuous targets into many-class labels: Dirichlet(alpha)-spaced
// quantile bin edges, bins below min_bin merged into their nearest neighbour,
// then label ids randomly permuted to strip the ordinal structure. Returns
// labels in [0, k_out).
std::vector<std::uint32_t> build_many_class_benchmark(std::span<const double> y, std::size_t k,
                                                      double alpha, std::size_t min_bin,
                                                      std::uint64_t seed,
                                                      std::size_t* k_out = nullptr);

struct ScoreRecord {
    std::string dataset;
    std::size_t fold = 0;
    std::string model;
    double score = 0.0;
};

// Per-(dataset, fold) min-max normalization onto [0, 1]; lower-is-better
// metrics are flipped so the best model always receives 1. A degenerate
// group (max == min) maps every model to 0.5.
std::vector<double> normalize_scores(std::span<const ScoreRecord> records, bool lower_is_better);

// (err - best_err) / err * 100; requires err >= best_err > 0.
double improvability(double err, double best_err);

}  // namespace tfe::bench
