#pragma once

#include <vector>

#include "tfe/error.hpp"

namespace tfe::model {

// Piecewise-constant predictive density over fixed buckets. The CDF is
// piecewise linear; quantiles are decoded by inverting it.
struct BarDistribution {
    std::vector<double> edges;   // [n_buckets + 1], strictly increasing
    std::vector<double> logits;  // [n_buckets]

    void validate() const;
    std::vector<double> probs() const;     // softmax of the logits
    double cdf(double x) const;            // non-decreasing, 0 at lo, 1 at hi
    double quantile(double q) const;       // q in (0, 1)
    double mean() const;
};

// Equal-width bucket edges over the (standardized) train-target range with a
// 10% margin on each side for mild extrapolation.
std::vector<double> bar_edges_from_targets(const std::vector<double>& y_train,
                                           std::size_t n_buckets);

}  // namespace tfe::model
