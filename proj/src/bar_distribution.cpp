#include "tfe/bar_distribution.hpp"

#include <algorithm>
#include <cmath>

namespace tfe::model {

void BarDistribution::validate() const {
    if (edges.size() != logits.size() + 1 || logits.empty()) {
        throw DimError("bar distribution: edge/logit size mismatch");
    }
    for (std::size_t i = 1; i < edges.size(); ++i) {
        if (!(edges[i] > edges[i - 1])) throw DimError("bar distribution: edges not increasing");
    }
}

std::vector<double> BarDistribution::probs() const {
    validate();
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    std::vector<double> p(logits.size());
    double z = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

double BarDistribution::cdf(double x) const {
    const auto p = probs();
    if (x <= edges.front()) return 0.0;
    if (x >= edges.back()) return 1.0;
    double cum = 0.0;
    for (std::size_t b = 0; b < p.size(); ++b) {
        if (x < edges[b + 1]) {
            const double w = (x - edges[b]) / (edges[b + 1] - edges[b]);
            return cum + p[b] * w;
        }
        cum += p[b];
    }
    return 1.0;
}

double BarDistribution::quantile(double q) const {
    if (!(q > 0.0 && q < 1.0)) throw DimError("quantile level must lie in (0, 1)");
    const auto p = probs();
    double cum = 0.0;
    for (std::size_t b = 0; b < p.size(); ++b) {
        if (q <= cum + p[b] || b + 1 == p.size()) {
            const double w = p[b] > 0 ? (q - cum) / p[b] : 0.5;
            return edges[b] + std::clamp(w, 0.0, 1.0) * (edges[b + 1] - edges[b]);
        }
        cum += p[b];
    }
    return edges.back();
}

double BarDistribution::mean() const {
    const auto p = probs();
    double m = 0.0;
    for (std::size_t b = 0; b < p.size(); ++b) {
        m += p[b] * 0.5 * (edges[b] + edges[b + 1]);
    }
    return m;
}

std::vector<double> bar_edges_from_targets(const std::vector<double>& y_train,
                                           std::size_t n_buckets) {
    if (y_train.empty()) throw DimError("bar edges: empty targets");
    double lo = y_train[0], hi = y_train[0];
    for (double v : y_train) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double range = hi - lo;
    if (!(range > 0)) {
        lo -= 1.0;
        hi += 1.0;
        range = 2.0;
    }
    lo -= 0.1 * range;
    hi += 0.1 * range;
    std::vector<double> edges(n_buckets + 1);
    for (std::size_t i = 0; i <= n_buckets; ++i) {
        edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_buckets);
    }
    return edges;
}

}  // namespace tfe::model
