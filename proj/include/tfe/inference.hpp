#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfe/model.hpp"
#include "tfe/preprocess.hpp"

namespace tfe::infer {

// Row-streaming plan. Ranges always partition [0, n_train + n_test) in
// chunk_size slices; `enabled` decides whether execution actually streams
// (rule: n_train + n_test > 2048, unless overridden).
struct ChunkPlan {
    std::size_t chunk_size = 2048;
    std::vector<model::RowRange> chunk_ranges;
    bool enabled = false;
    std::size_t col_batch = 8;  // phase-(i) column-group batch when enabled
};

ChunkPlan plan_chunks(std::size_t n_train, std::size_t n_test, std::size_t chunk_size = 2048,
                      std::optional<bool> override_enabled = std::nullopt);

// Two-phase streaming forward: (i) inducing states once over the train set,
// column-batched; (ii) rows streamed through cell embedding, the stage-1 row
// path and stage 2; then the ICL stage and decoding. Equivalent to forward()
// (bit-exact with a single chunk). chunk_order, when given, permutes the
// phase-(ii) execution order. pre_icl_stats receives the transient
// allocations of the pre-ICL phases.
model::ForwardResult forward_chunked(const model::ModelConfig& cfg,
                                     const model::ModelWeights& w,
                                     const model::DatasetView& view, const ChunkPlan& plan,
                                     alloc::AllocStats* pre_icl_stats = nullptr,
                                     std::span<const std::size_t> chunk_order = {});

// The three cached components plus what the decoder consumes: per-block
// inducing states, per-layer single-head train K/V of the test attention
// path, and the final-layer train embeddings (post-norm).
struct KvCache {
    std::vector<Tensor> inducing_states;      // per stage-1 block [G, K, D]
    model::IclCaptureT<float> icl;            // per layer [N, 2, head_dim]
    Tensor final_train_embeds;                // [N, icl_emsize]
    Tensor train_onehot;                      // [N, C] (classification)
    std::vector<double> bar_edges;            // (regression)
    std::uint64_t config_hash = 0;
    std::uint64_t view_signature = 0;
    std::uint64_t n_train = 0;
    prior::Task task = prior::Task::classification;
};

// Structural identity of an estimator view, used for cache-mismatch checks.
std::uint64_t estimator_signature(const prep::EstimatorConfig& config);

// Runs the train-side computation once (chunked per the plan) and captures
// the cache. The view must contain only train rows.
KvCache build_kv_cache(const model::ModelConfig& cfg, const model::ModelWeights& w,
                       const model::DatasetView& train_view, std::uint64_t view_signature,
                       const ChunkPlan* plan = nullptr);

// Test rows embedded against the cached inducing states, run through the ICL
// test path against the cached K/V, and decoded against the cached train
// embeddings. The view must contain only test rows preprocessed under the
// same estimator config as the cache.
model::ForwardResult predict_cached(const KvCache& cache, const model::ModelConfig& cfg,
                                    const model::ModelWeights& w,
                                    const model::DatasetView& test_view);

// Cache file, magic "TPFC"; carries the config hash and estimator signature.
void save_cache(const std::string& path, const KvCache& cache);
KvCache load_cache(const std::string& path);

// Analytic cache size: per-layer train K/V in the single test head, final
// train embeddings, and the per-block inducing states for the given feature
// count.
std::uint64_t estimate_cache_bytes(const model::ModelConfig& cfg, std::uint64_t n_train,
                                   std::size_t bytes_per_scalar, std::size_t n_features);

struct EnsembleResult {
    DTensor probs;                           // [M, C], original class ids
    std::vector<model::BarDistribution> bars;  // standardized target space
    double target_mean = 0.0;
    double target_std = 1.0;
    std::vector<std::size_t> test_row_ids;   // dataset row per output row
};

// Mean of per-estimator probability vectors (label permutations inverted
// first) or of bar-distribution densities on the shared edges.
EnsembleResult ensemble_predict(const model::ModelConfig& cfg, const model::ModelWeights& w,
                                const prior::Dataset& ds, std::size_t n_estimators,
                                std::uint64_t seed, std::size_t chunk_size = 2048,
                                std::optional<bool> chunk_override = std::nullopt);

// Piecewise-linear CDF inversion at level q in (0, 1).
double decode_quantile(const model::BarDistribution& bar, double q);

// q * (y - yhat) when y >= yhat, else (1 - q) * (yhat - y).
double pinball_loss(double y_true, double y_pred, double q);

}  // namespace tfe::infer
