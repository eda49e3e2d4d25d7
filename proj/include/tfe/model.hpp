#pragma once

#include <span>
#include <utility>
#include <vector>

#include "tfe/alloc_stats.hpp"
#include "tfe/bar_distribution.hpp"
#include "tfe/model_config.hpp"
#include "tfe/view.hpp"
#include "tfe/weights.hpp"

namespace tfe::model {

struct RowRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

// Grouped cell embeddings [rows, groups, D] for the given row and group
// ranges. Feature f is grouped with its two cyclically shifted neighbors;
// each (value, nan-indicator) triplet is linearly projected, and train rows
// receive the target-aware embedding.
template <class T>
TensorT<T> embed_cells(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                       const DatasetViewT<T>& view, RowRange rows, std::size_t g_begin,
                       std::size_t g_end);

template <class T>
TensorT<T> embed_cells(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                       const DatasetViewT<T>& view);

// Per-block inducing summaries [G, K, D] computed over the train rows by
// streaming row chunks (a single full-range chunk reproduces the plain
// two-pass attention bit for bit). Column groups are processed in batches of
// col_batch to bound the working set.
template <class T>
std::vector<TensorT<T>> stage1_inducing_states(const ModelConfig& cfg,
                                               const ModelWeightsT<T>& w,
                                               const DatasetViewT<T>& view,
                                               std::span<const RowRange> train_chunks,
                                               std::size_t col_batch);

// Phase-(ii) unit: embeds the rows of one chunk, runs them through the
// stage-1 row path against the cached inducing states and through stage 2,
// and writes the aggregated row embeddings into row_embeds[rows].
template <class T>
void pre_icl_rows(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                  const DatasetViewT<T>& view, RowRange rows,
                  std::span<const TensorT<T>> inducing, TensorT<T>& row_embeds);

// Op-level form over an already-materialized grouped tensor: inducing states
// computed over the given rows, rows attend back. Returns (cell_states,
// per-block inducing states).
template <class T>
std::pair<TensorT<T>, std::vector<TensorT<T>>> stage1_distribution_embed(
    const ModelConfig& cfg, const ModelWeightsT<T>& w, const TensorT<T>& grouped);

template <class T>
TensorT<T> stage1_apply_rows(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                             const TensorT<T>& grouped, std::span<const TensorT<T>> inducing);

// Row-wise feature aggregation: CLS tokens and group embeddings attend to one
// another (RoPE along the group axis, plain softmax); the concatenated CLS
// states form the row embedding [R, icl_emsize].
template <class T>
TensorT<T> stage2_aggregate(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                            const TensorT<T>& cells);

// Per-layer train-side K/V of the test attention path, [N, 2, head_dim] each.
template <class T>
struct IclCaptureT {
    std::vector<TensorT<T>> kv;
};

// In-context learning stage: train rows run full self-attention over the
// train block, test rows attend to the train block through the single test
// KV head. Label embeddings are added to train rows before the first layer.
// Output is post final-RMSNorm.
template <class T>
TensorT<T> stage3_icl(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                      const TensorT<T>& row_embeds, const DatasetViewT<T>& view,
                      IclCaptureT<T>* capture = nullptr);

// Test rows only, attending to cached per-layer K/V.
template <class T>
TensorT<T> stage3_icl_test_path(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                                const TensorT<T>& test_rows, const IclCaptureT<T>& cache,
                                std::size_t n_train);

// Attention-based retrieval decoder: head-averaged attention-weighted average
// of the in-context one-hot labels. Rejects C above the supported ceiling.
template <class T>
TensorT<T> many_class_decode(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                             const TensorT<T>& train_final, const TensorT<T>& y_onehot,
                             const TensorT<T>& test_final);

// log(clip(p, 1e-10)) per entry, the decoder's logit form.
template <class T>
TensorT<T> log_clip_probs(const TensorT<T>& probs);

template <class T>
std::vector<BarDistribution> regression_decode(const ModelConfig& cfg,
                                               const ModelWeightsT<T>& w,
                                               const TensorT<T>& test_final,
                                               const std::vector<double>& edges);

template <class T>
struct ForwardResultT {
    TensorT<T> probs;                   // [M, C] classification
    std::vector<BarDistribution> bars;  // [M] regression
    TensorT<T> final_embeds;            // [R, icl_emsize]
    std::vector<double> bar_edges;
};

using ForwardResult = ForwardResultT<float>;

// Task-specific decode of the final ICL embeddings (retrieval decoder or
// bar-distribution head) into a ForwardResult.
template <class T>
ForwardResultT<T> decode_result(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                                const DatasetViewT<T>& view, TensorT<T> final_embeds);

// Pre-ICL phases (i) + (ii): returns (row_embeds [R, E], inducing states).
// row_chunk bounds the streamed row slice, col_batch the phase-(i) column
// batch; pre_icl_stats, when given, receives the transient allocation stats
// of the pre-ICL work (the output buffer is allocated outside the scope).
template <class T>
std::pair<TensorT<T>, std::vector<TensorT<T>>> run_pre_icl(
    const ModelConfig& cfg, const ModelWeightsT<T>& w, const DatasetViewT<T>& view,
    std::size_t row_chunk, std::size_t col_batch, alloc::AllocStats* pre_icl_stats = nullptr);

// Full pipeline with explicit chunk parameters (forward() uses a single
// chunk). Views must hold the train block first.
template <class T>
ForwardResultT<T> run_pipeline(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                               const DatasetViewT<T>& view, std::size_t row_chunk,
                               std::size_t col_batch,
                               alloc::AllocStats* pre_icl_stats = nullptr);

template <class T>
ForwardResultT<T> forward(const ModelConfig& cfg, const ModelWeightsT<T>& w,
                          const DatasetViewT<T>& view);

}  // namespace tfe::model
