#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfe/dataset.hpp"
#include "tfe/view.hpp"

namespace tfe::prep {

enum class Transform : std::uint8_t { robust_softclip = 0, quantile_standard = 1 };

enum class Metric : std::uint8_t { f1 = 0, accuracy = 1 };

struct EstimatorConfig {
    std::size_t estimator_index = 0;
    std::vector<std::size_t> feature_subset;  // sorted, <= max_feats entries
    Transform transform = Transform::robust_softclip;
    bool use_svd = false;
    std::uint64_t row_permutation_seed = 0;
    std::uint64_t class_label_permutation_seed = 0;
};

// Round-robin feature coverage: estimator i reads a circular window of the
// (shuffled or importance-ordered) feature list, so the union of subsets
// covers every feature whenever n_estimators * max_feats >= n_features.
// Transforms alternate between the two families; every second estimator
// appends SVD components.
std::vector<EstimatorConfig> build_estimator_configs(
    std::size_t n_estimators, std::size_t n_features, std::size_t max_feats, std::uint64_t seed,
    std::span<const double> importance = {});

std::string serialize_configs(std::span<const EstimatorConfig> configs);

// Column transforms in op form: fit and apply on the given column. Missing
// (NaN) cells pass through untouched.
std::vector<double> robust_scale_softclip(std::span<const double> col);
std::vector<double> quantile_standard_transform(std::span<const double> col);

// Fitted variants for the train-fit / all-rows-apply pipeline.
struct RobustScaleParams {
    double median = 0.0;
    double scale = 1.0;
    static RobustScaleParams fit(std::span<const double> train_col);
    double apply(double v) const;
};

struct QuantileTransformParams {
    std::vector<double> sorted_train;  // non-missing train values, ascending
    static QuantileTransformParams fit(std::span<const double> train_col);
    double apply(double v) const;
};

// Appends the first k left-singular projections (scaled by the singular
// values) as extra columns. Missing cells are mean-imputed for the
// decomposition only; the original columns are returned unchanged.
// x is row-major [n, f]; returns [n, f + k'] with k' = min(k, rank bound).
std::vector<double> svd_augment(std::span<const double> x, std::size_t n, std::size_t f,
                                std::size_t k, std::size_t* k_out = nullptr);

// One-sided Jacobi SVD of a dense row-major matrix. Returns up to max_rank
// components sorted by descending singular value.
struct SvdComponents {
    std::vector<double> singular_values;      // [r]
    std::vector<double> right_vectors;        // [r][f] row-major
    std::vector<double> scores;               // [n][r] row-major, U * S
};
SvdComponents jacobi_svd(std::span<const double> a, std::size_t n, std::size_t f,
                         std::size_t max_rank);

// Total impurity decrease per feature over a forest of single-split stumps
// fitted on random (feature, threshold) proposals over a row subsample.
// Classification uses Gini impurity, regression variance reduction.
std::vector<double> gini_importance(std::span<const double> x, std::size_t n, std::size_t f,
                                    std::span<const double> y, bool classification,
                                    std::size_t n_stumps, std::size_t subsample,
                                    std::uint64_t seed);

// NLL-minimizing softmax temperature over a fixed search range.
double fit_temperature(std::span<const double> logits, std::size_t n, std::size_t c,
                       std::span<const std::int32_t> y);
std::vector<double> temperature_scale(std::span<const double> logits, std::size_t n,
                                      std::size_t c, double t);

// Best decision threshold among midpoints of sorted distinct probabilities;
// ties resolve to the lowest candidate. Positive prediction: p >= threshold.
double tune_threshold(std::span<const double> probs, std::span<const std::int32_t> y,
                      Metric metric);

// Estimator view assembly: feature subset, train-fitted transform, optional
// SVD augmentation, row permutation and class label permutation.
struct ViewBuild {
    model::DatasetView view;
    EstimatorConfig config;
    std::vector<std::uint32_t> label_perm;      // original class -> view class
    std::vector<std::uint32_t> label_perm_inv;  // view class -> original class
};

ViewBuild build_view(const prior::Dataset& ds, const EstimatorConfig& config,
                     std::size_t svd_k = 8);

}  // namespace tfe::prep
