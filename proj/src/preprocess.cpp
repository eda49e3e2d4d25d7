#include "tfe/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "tfe/rng.hpp"

namespace tfe::prep {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<double> finite_values(std::span<const double> col) {
    std::vector<double> out;
    out.reserve(col.size());
    for (double v : col) {
        if (!std::isnan(v)) out.push_back(v);
    }
    return out;
}

// Linear-interpolated empirical quantile of a sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double h = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double w = h - static_cast<double>(lo);
    return sorted[lo] * (1.0 - w) + sorted[hi] * w;
}

// Acklam's rational approximation of the inverse standard normal CDF with one
// Halley refinement; good to ~1e-15 over (0, 1).
double inv_norm_cdf(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1 - plow;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else if (p <= phigh) {
        const double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    } else {
        const double q = std::sqrt(-2 * std::log(1 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2 * 3.14159265358979323846) * std::exp(x * x / 2);
    return x - u / (1 + x * u / 2);
}

double soft_clip4(double x) { return 4.0 * std::tanh(x / 4.0); }

}  // namespace

std::vector<EstimatorConfig> build_estimator_configs(std::size_t n_estimators,
                                                     std::size_t n_features,
                                                     std::size_t max_feats, std::uint64_t seed,
                                                     std::span<const double> importance) {
    if (n_estimators < 1) throw ConfigError("estimators: need at least one");
    if (n_features < 1) throw ConfigError("estimators: need at least one feature");
    if (!importance.empty() && importance.size() != n_features) {
        throw ConfigError("estimators: importance length mismatch");
    }

    std::vector<std::size_t> order(n_features);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (importance.empty()) {
        CounterRng rng(seed, 0xFEA7);
        rng.shuffle(std::span<std::size_t>(order));
    } else {
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return importance[a] > importance[b];
        });
    }

    const std::size_t target = std::min(n_features, max_feats);
    const std::size_t stride = (n_features + n_estimators - 1) / n_estimators;

    std::vector<EstimatorConfig> configs(n_estimators);
    for (std::size_t i = 0; i < n_estimators; ++i) {
        EstimatorConfig& cfg = configs[i];
        cfg.estimator_index = i;
        cfg.feature_subset.reserve(target);
        for (std::size_t t = 0; t < target; ++t) {
            cfg.feature_subset.push_back(order[(i * stride + t) % n_features]);
        }
        std::sort(cfg.feature_subset.begin(), cfg.feature_subset.end());
        cfg.transform = (i % 2 == 0) ? Transform::robust_softclip : Transform::quantile_standard;
        cfg.use_svd = (i % 2 == 1);
        cfg.row_permutation_seed = CounterRng::mix(seed + 101 * (i + 1));
        cfg.class_label_permutation_seed = CounterRng::mix(seed + 211 * (i + 1));
    }
    return configs;
}

std::string serialize_configs(std::span<const EstimatorConfig> configs) {
    std::ostringstream out;
    for (const EstimatorConfig& cfg : configs) {
        out << "estimator=" << cfg.estimator_index
            << " transform="
            << (cfg.transform == Transform::robust_softclip ? "robust_softclip"
                                                            : "quantile_standard")
            << " svd=" << (cfg.use_svd ? 1 : 0) << " row_seed=" << cfg.row_permutation_seed
            << " label_seed=" << cfg.class_label_permutation_seed << " features=";
        for (std::size_t i = 0; i < cfg.feature_subset.size(); ++i) {
            if (i > 0) out << ",";
            out << cfg.feature_subset[i];
        }
        out << "\n";
    }
    return out.str();
}

RobustScaleParams RobustScaleParams::fit(std::span<const double> train_col) {
    std::vector<double> vals = finite_values(train_col);
    if (vals.size() < 2) throw ConfigError("robust scale: needs >= 2 non-missing values");
    std::sort(vals.begin(), vals.end());
    RobustScaleParams p;
    p.median = quantile_sorted(vals, 0.5);
    double scale = quantile_sorted(vals, 0.75) - quantile_sorted(vals, 0.25);
    if (scale <= 0) {
        double mean = 0;
        for (double v : vals) mean += v;
        mean /= static_cast<double>(vals.size());
        double var = 0;
        for (double v : vals) var += (v - mean) * (v - mean);
        scale = std::sqrt(var / static_cast<double>(vals.size()));
    }
    if (scale <= 0) scale = 1.0;
    p.scale = scale;
    return p;
}

double RobustScaleParams::apply(double v) const {
    if (std::isnan(v)) return v;
    return soft_clip4((v - median) / scale);
}

std::vector<double> robust_scale_softclip(std::span<const double> col) {
    const RobustScaleParams p = RobustScaleParams::fit(col);
    std::vector<double> out(col.begin(), col.end());
    for (double& v : out) v = p.apply(v);
    return out;
}

QuantileTransformParams QuantileTransformParams::fit(std::span<const double> train_col) {
    QuantileTransformParams p;
    p.sorted_train = finite_values(train_col);
    std::sort(p.sorted_train.begin(), p.sorted_train.end());
    return p;
}

double QuantileTransformParams::apply(double v) const {
    if (std::isnan(v)) return v;
    const std::size_t n = sorted_train.size();
    if (n < 2) return 0.0;
    if (sorted_train.front() == sorted_train.back()) return 0.0;
    // Midrank of v within the train sample, interpolated between neighbors.
    const auto lo = std::lower_bound(sorted_train.begin(), sorted_train.end(), v);
    const auto hi = std::upper_bound(sorted_train.begin(), sorted_train.end(), v);
    double rank;  // 1-based
    if (lo != hi) {
        rank = 0.5 * static_cast<double>((lo - sorted_train.begin()) + 1 +
                                         (hi - sorted_train.begin()));
    } else if (lo == sorted_train.begin()) {
        rank = 0.5;  // below every train value
    } else if (lo == sorted_train.end()) {
        rank = static_cast<double>(n) + 0.5;
    } else {
        const double a = *(lo - 1), b = *lo;
        const double w = (v - a) / (b - a);
        rank = static_cast<double>(lo - sorted_train.begin()) + w;
    }
    const double p = std::clamp(rank / static_cast<double>(n + 1), 1e-7, 1.0 - 1e-7);
    return inv_norm_cdf(p);
}

std::vector<double> quantile_standard_transform(std::span<const double> col) {
    const QuantileTransformParams params = QuantileTransformParams::fit(col);
    std::vector<double> out(col.begin(), col.end());
    std::size_t n_finite = 0;
    double mean = 0;
    for (double& v : out) {
        v = params.apply(v);
        if (!std::isnan(v)) {
            mean += v;
            ++n_finite;
        }
    }
    if (n_finite == 0) return out;
    mean /= static_cast<double>(n_finite);
    double var = 0;
    for (double v : out) {
        if (!std::isnan(v)) var += (v - mean) * (v - mean);
    }
    const double stdev = std::sqrt(var / static_cast<double>(n_finite));
    for (double& v : out) {
        if (!std::isnan(v)) v = stdev > 0 ? (v - mean) / stdev : 0.0;
    }
    return out;
}

SvdComponents jacobi_svd(std::span<const double> a, std::size_t n, std::size_t f,
                         std::size_t max_rank) {
    // One-sided Jacobi: rotate column pairs of W until all pairs are
    // orthogonal; W's columns then equal U * S.
    std::vector<double> w(a.begin(), a.end());
    std::vector<double> v(f * f, 0.0);
    for (std::size_t i = 0; i < f; ++i) v[i * f + i] = 1.0;

    const double eps = 1e-12;
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < f; ++p) {
            for (std::size_t q = p + 1; q < f; ++q) {
                double alpha = 0, beta = 0, gamma = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double wp = w[i * f + p], wq = w[i * f + q];
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if (std::abs(gamma) <= eps * std::sqrt(alpha * beta) || gamma == 0.0) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < n; ++i) {
                    const double wp = w[i * f + p], wq = w[i * f + q];
                    w[i * f + p] = c * wp - s * wq;
                    w[i * f + q] = s * wp + c * wq;
                }
                for (std::size_t i = 0; i < f; ++i) {
                    const double vp = v[i * f + p], vq = v[i * f + q];
                    v[i * f + p] = c * vp - s * vq;
                    v[i * f + q] = s * vp + c * vq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> norms(f, 0.0);
    for (std::size_t j = 0; j < f; ++j) {
        double sq = 0;
        for (std::size_t i = 0; i < n; ++i) sq += w[i * f + j] * w[i * f + j];
        norms[j] = std::sqrt(sq);
    }
    std::vector<std::size_t> idx(f);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    const std::size_t r = std::min({max_rank, f, n});
    SvdComponents out;
    out.singular_values.resize(r);
    out.right_vectors.resize(r * f);
    out.scores.resize(n * r);
    for (std::size_t j = 0; j < r; ++j) {
        const std::size_t src = idx[j];
        out.singular_values[j] = norms[src];
        for (std::size_t i = 0; i < f; ++i) out.right_vectors[j * f + i] = v[i * f + src];
        for (std::size_t i = 0; i < n; ++i) out.scores[i * r + j] = w[i * f + src];
    }
    return out;
}

std::vector<double> svd_augment(std::span<const double> x, std::size_t n, std::size_t f,
                                std::size_t k, std::size_t* k_out) {
    if (k == 0 || n == 0 || f == 0) {
        if (k_out != nullptr) *k_out = 0;
        return {x.begin(), x.end()};
    }
    k = std::min({k, n, f});

    // Mean-impute for the decomposition only.
    std::vector<double> imputed(x.begin(), x.end());
    for (std::size_t c = 0; c < f; ++c) {
        double mean = 0;
        std::size_t cnt = 0;
        for (std::size_t r = 0; r < n; ++r) {
            const double v = x[r * f + c];
            if (!std::isnan(v)) {
                mean += v;
                ++cnt;
            }
        }
        mean = cnt > 0 ? mean / static_cast<double>(cnt) : 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            if (std::isnan(imputed[r * f + c])) imputed[r * f + c] = mean;
        }
    }

    const SvdComponents svd = jacobi_svd(imputed, n, f, k);
    const std::size_t r = svd.singular_values.size();
    std::vector<double> out(n * (f + r));
    for (std::size_t row = 0; row < n; ++row) {
        for (std::size_t c = 0; c < f; ++c) out[row * (f + r) + c] = x[row * f + c];
        for (std::size_t j = 0; j < r; ++j) out[row * (f + r) + f + j] = svd.scores[row * r + j];
    }
    if (k_out != nullptr) *k_out = r;
    return out;
}

namespace {

double gini_impurity(const std::vector<std::size_t>& counts, std::size_t total) {
    if (total == 0) return 0.0;
    double g = 1.0;
    for (std::size_t c : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(total);
        g -= p * p;
    }
    return g;
}

}  // namespace

std::vector<double> gini_importance(std::span<const double> x, std::size_t n, std::size_t f,
                                    std::span<const double> y, bool classification,
                                    std::size_t n_stumps, std::size_t subsample,
                                    std::uint64_t seed) {
    std::vector<double> scores(f, 0.0);
    if (n == 0 || f == 0) return scores;
    CounterRng rng(seed, 0x617E);

    std::size_t n_classes = 0;
    if (classification) {
        for (double v : y) n_classes = std::max<std::size_t>(n_classes, static_cast<std::size_t>(v) + 1);
    }

    const std::size_t sample_n = std::min(subsample == 0 ? n : subsample, n);
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});

    for (std::size_t stump = 0; stump < n_stumps; ++stump) {
        rng.shuffle(std::span<std::size_t>(rows));
        const std::size_t feature = rng.uniform_int(f);

        std::vector<std::size_t> sample;
        sample.reserve(sample_n);
        for (std::size_t i = 0; i < n && sample.size() < sample_n; ++i) {
            if (!std::isnan(x[rows[i] * f + feature])) sample.push_back(rows[i]);
        }
        if (sample.size() < 2) continue;

        const double va = x[sample[rng.uniform_int(sample.size())] * f + feature];
        const double vb = x[sample[rng.uniform_int(sample.size())] * f + feature];
        const double threshold = 0.5 * (va + vb);

        if (classification) {
            std::vector<std::size_t> left(n_classes, 0), right(n_classes, 0), all(n_classes, 0);
            std::size_t nl = 0, nr = 0;
            for (std::size_t r : sample) {
                const auto cls = static_cast<std::size_t>(y[r]);
                ++all[cls];
                if (x[r * f + feature] <= threshold) {
                    ++left[cls];
                    ++nl;
                } else {
                    ++right[cls];
                    ++nr;
                }
            }
            if (nl == 0 || nr == 0) continue;
            const double total = static_cast<double>(sample.size());
            const double decrease = gini_impurity(all, sample.size()) -
                                    (static_cast<double>(nl) / total) * gini_impurity(left, nl) -
                                    (static_cast<double>(nr) / total) * gini_impurity(right, nr);
            if (decrease > 0) scores[feature] += decrease;
        } else {
            double sl = 0, sl2 = 0, sr = 0, sr2 = 0;
            std::size_t nl = 0, nr = 0;
            for (std::size_t r : sample) {
                const double t = y[r];
                if (x[r * f + feature] <= threshold) {
                    sl += t;
                    sl2 += t * t;
                    ++nl;
                } else {
                    sr += t;
                    sr2 += t * t;
                    ++nr;
                }
            }
            if (nl == 0 || nr == 0) continue;
            const double total = static_cast<double>(nl + nr);
            const double var_all = (sl2 + sr2) / total - ((sl + sr) / total) * ((sl + sr) / total);
            const double var_l = sl2 / nl - (sl / nl) * (sl / nl);
            const double var_r = sr2 / nr - (sr / nr) * (sr / nr);
            const double decrease = var_all - (nl / total) * var_l - (nr / total) * var_r;
            if (decrease > 0) scores[feature] += decrease;
        }
    }
    return scores;
}

namespace {

double nll_at_temperature(std::span<const double> logits, std::size_t n, std::size_t c,
                          std::span<const std::int32_t> y, double t) {
    double nll = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) m = std::max(m, logits[i * c + j] / t);
        double z = 0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(logits[i * c + j] / t - m);
        nll -= logits[i * c + static_cast<std::size_t>(y[i])] / t - m - std::log(z);
    }
    return nll / static_cast<double>(n);
}

}  // namespace

double fit_temperature(std::span<const double> logits, std::size_t n, std::size_t c,
                       std::span<const std::int32_t> y) {
    if (n == 0 || c < 2) return 1.0;
    bool degenerate = true;
    for (std::size_t i = 1; i < n; ++i) {
        if (y[i] != y[0]) {
            degenerate = false;
            break;
        }
    }
    if (degenerate) return 1.0;

    // Coarse log-grid then golden-section refinement.
    const double lo = 0.05, hi = 20.0;
    double best_t = 1.0, best_nll = std::numeric_limits<double>::infinity();
    const int grid = 121;
    for (int i = 0; i < grid; ++i) {
        const double t = lo * std::pow(hi / lo, static_cast<double>(i) / (grid - 1));
        const double nll = nll_at_temperature(logits, n, c, y, t);
        if (nll < best_nll) {
            best_nll = nll;
            best_t = t;
        }
    }
    double a = best_t / std::pow(hi / lo, 1.0 / (grid - 1));
    double b = best_t * std::pow(hi / lo, 1.0 / (grid - 1));
    a = std::max(a, lo);
    b = std::min(b, hi);
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
    double f1 = nll_at_temperature(logits, n, c, y, x1);
    double f2 = nll_at_temperature(logits, n, c, y, x2);
    for (int it = 0; it < 80; ++it) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = nll_at_temperature(logits, n, c, y, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = nll_at_temperature(logits, n, c, y, x2);
        }
    }
    return 0.5 * (a + b);
}

std::vector<double> temperature_scale(std::span<const double> logits, std::size_t n,
                                      std::size_t c, double t) {
    if (!(t > 0)) throw ConfigError("temperature must be positive");
    std::vector<double> probs(n * c);
    for (std::size_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) m = std::max(m, logits[i * c + j] / t);
        double z = 0;
        for (std::size_t j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(logits[i * c + j] / t - m);
            z += probs[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    }
    return probs;
}

namespace {

double threshold_metric(std::span<const double> probs, std::span<const std::int32_t> y,
                        double threshold, Metric metric) {
    std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool pred = probs[i] >= threshold;
        const bool truth = y[i] == 1;
        if (pred && truth) ++tp;
        if (pred && !truth) ++fp;
        if (!pred && truth) ++fn;
        if (pred == truth) ++correct;
    }
    if (metric == Metric::accuracy) {
        return static_cast<double>(correct) / static_cast<double>(probs.size());
    }
    if (2 * tp + fp + fn == 0) return 0.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

}  // namespace

double tune_threshold(std::span<const double> probs, std::span<const std::int32_t> y,
                      Metric metric) {
    if (probs.size() != y.size() || probs.empty()) {
        throw DimError("tune_threshold: size mismatch");
    }
    bool has0 = false, has1 = false;
    for (std::int32_t v : y) {
        has0 |= (v == 0);
        has1 |= (v == 1);
    }
    if (!has0 || !has1) return 0.5;

    std::vector<double> distinct(probs.begin(), probs.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) return 0.5;

    double best_threshold = 0.5;
    double best_metric = -1.0;
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
        const double candidate = 0.5 * (distinct[i] + distinct[i + 1]);
        const double m = threshold_metric(probs, y, candidate, metric);
        if (m > best_metric) {
            best_metric = m;
            best_threshold = candidate;
        }
    }
    return best_threshold;
}

ViewBuild build_view(const prior::Dataset& ds, const EstimatorConfig& config, std::size_t svd_k) {
    for (std::size_t c : config.feature_subset) {
        if (c >= ds.n_features) throw ConfigError("view: feature index out of range");
    }
    if (config.feature_subset.empty()) throw ConfigError("view: empty feature subset");

    const std::size_t n = ds.n_rows;
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t r = 0; r < n; ++r) {
        (ds.split[r] == 0 ? train_rows : test_rows).push_back(r);
    }
    if (train_rows.empty()) throw ConfigError("view: dataset has no train rows");

    CounterRng perm_rng(config.row_permutation_seed, 0);
    perm_rng.shuffle(std::span<std::size_t>(train_rows));

    std::vector<std::size_t> row_ids = train_rows;
    row_ids.insert(row_ids.end(), test_rows.begin(), test_rows.end());

    const std::size_t f0 = config.feature_subset.size();
    std::vector<double> cells(n * f0);
    for (std::size_t c = 0; c < f0; ++c) {
        const std::size_t src_col = config.feature_subset[c];
        std::vector<double> train_col;
        train_col.reserve(train_rows.size());
        for (std::size_t r : train_rows) train_col.push_back(ds.cell(r, src_col));

        if (config.transform == Transform::robust_softclip) {
            RobustScaleParams params{};
            bool fitted = true;
            try {
                params = RobustScaleParams::fit(train_col);
            } catch (const ConfigError&) {
                fitted = false;  // all-missing or single value: pass through as zeros
            }
            for (std::size_t vr = 0; vr < n; ++vr) {
                const double v = ds.cell(row_ids[vr], src_col);
                cells[vr * f0 + c] = fitted ? params.apply(v) : (std::isnan(v) ? kNaN : 0.0);
            }
        } else {
            const QuantileTransformParams params = QuantileTransformParams::fit(train_col);
            for (std::size_t vr = 0; vr < n; ++vr) {
                cells[vr * f0 + c] = params.apply(ds.cell(row_ids[vr], src_col));
            }
        }
    }

    std::size_t f = f0;
    if (config.use_svd && svd_k > 0) {
        // Fit the right singular vectors on (a bounded slice of) the train
        // block, then project every row.
        const std::size_t n_train = train_rows.size();
        const std::size_t fit_rows = std::min<std::size_t>(n_train, 512);
        std::vector<double> fit_mat(fit_rows * f0);
        std::vector<double> col_mean(f0, 0.0);
        std::vector<std::size_t> col_cnt(f0, 0);
        for (std::size_t r = 0; r < n_train; ++r) {
            for (std::size_t c = 0; c < f0; ++c) {
                const double v = cells[r * f0 + c];
                if (!std::isnan(v)) {
                    col_mean[c] += v;
                    ++col_cnt[c];
                }
            }
        }
        for (std::size_t c = 0; c < f0; ++c) {
            col_mean[c] = col_cnt[c] > 0 ? col_mean[c] / static_cast<double>(col_cnt[c]) : 0.0;
        }
        for (std::size_t r = 0; r < fit_rows; ++r) {
            const std::size_t src = r * n_train / fit_rows;  // strided slice
            for (std::size_t c = 0; c < f0; ++c) {
                const double v = cells[src * f0 + c];
                fit_mat[r * f0 + c] = std::isnan(v) ? col_mean[c] : v;
            }
        }
        const std::size_t k = std::min({svd_k, fit_rows, f0});
        const SvdComponents svd = jacobi_svd(fit_mat, fit_rows, f0, k);
        const std::size_t r_out = svd.singular_values.size();

        std::vector<double> extended(n * (f0 + r_out));
        for (std::size_t vr = 0; vr < n; ++vr) {
            for (std::size_t c = 0; c < f0; ++c) {
                extended[vr * (f0 + r_out) + c] = cells[vr * f0 + c];
            }
            for (std::size_t j = 0; j < r_out; ++j) {
                double score = 0;
                for (std::size_t c = 0; c < f0; ++c) {
                    const double v = cells[vr * f0 + c];
                    score += (std::isnan(v) ? col_mean[c] : v) * svd.right_vectors[j * f0 + c];
                }
                extended[vr * (f0 + r_out) + f0 + j] = score;
            }
        }
        cells = std::move(extended);
        f = f0 + r_out;
    }

    ViewBuild out;
    out.config = config;
    model::DatasetView& view = out.view;
    view.task = ds.task;
    view.n_classes = ds.n_classes;
    view.row_ids = row_ids;
    view.train_flags.assign(n, 0);
    for (std::size_t r = 0; r < train_rows.size(); ++r) view.train_flags[r] = 1;
    view.nan_mask.assign(n * f, 0);
    view.x = Tensor({n, f});
    for (std::size_t i = 0; i < n * f; ++i) {
        if (std::isnan(cells[i])) {
            view.nan_mask[i] = 1;
            view.x(i) = 0.0f;
        } else {
            view.x(i) = static_cast<float>(cells[i]);
        }
    }

    if (ds.task == prior::Task::classification) {
        out.label_perm.resize(ds.n_classes);
        std::iota(out.label_perm.begin(), out.label_perm.end(), 0u);
        CounterRng label_rng(config.class_label_permutation_seed, 0);
        label_rng.shuffle(std::span<std::uint32_t>(out.label_perm));
        out.label_perm_inv.resize(ds.n_classes);
        for (std::uint32_t c = 0; c < ds.n_classes; ++c) {
            out.label_perm_inv[out.label_perm[c]] = c;
        }
        view.y_class.resize(n);
        for (std::size_t vr = 0; vr < n; ++vr) {
            const auto orig = static_cast<std::uint32_t>(ds.y[row_ids[vr]]);
            view.y_class[vr] = static_cast<std::int32_t>(out.label_perm[orig]);
        }
    } else {
        double mean = 0;
        for (std::size_t r : train_rows) mean += ds.y[r];
        mean /= static_cast<double>(train_rows.size());
        double var = 0;
        for (std::size_t r : train_rows) var += (ds.y[r] - mean) * (ds.y[r] - mean);
        double stdev = std::sqrt(var / static_cast<double>(train_rows.size()));
        if (!(stdev > 1e-12)) stdev = 1.0;
        view.target_mean = mean;
        view.target_std = stdev;
        view.y_target.resize(n);
        for (std::size_t vr = 0; vr < n; ++vr) {
            view.y_target[vr] = static_cast<float>((ds.y[row_ids[vr]] - mean) / stdev);
        }
    }
    return out;
}

}  // namespace tfe::prep
