#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tfe/model_config.hpp"
#include "tfe/ops.hpp"
#include "tfe/tensor.hpp"

namespace tfe::model {

// Pre-norm attention + feed-forward sublayer weights. Matrices are [out, in].
// The scale net is present only on layers that use the query-aware softmax.
template <class T>
struct BlockWeightsT {
    TensorT<T> norm_attn;  // [D]
    TensorT<T> norm_kv;    // [D]
    TensorT<T> wq, wk, wv, wo;  // [D, D]
    ops::ScaleMlpT<T> qass;
    TensorT<T> norm_ffn;   // [D]
    TensorT<T> ffn_w1;     // [ff*D, D]
    TensorT<T> ffn_b1;     // [ff*D]
    TensorT<T> ffn_w2;     // [D, ff*D]
    TensorT<T> ffn_b2;     // [D]

    bool has_qass() const { return !qass.w1.empty(); }
};

template <class T>
struct Stage1BlockT {
    TensorT<T> inducing_init;  // [K, D] learned inducing vectors
    BlockWeightsT<T> ind;      // inducing update: queries = inducing, kv = rows
    BlockWeightsT<T> row;      // row update: queries = rows, kv = inducing states
};

template <class T>
struct IclBlockT {
    TensorT<T> norm_attn;  // [E]
    TensorT<T> norm_kv;    // [E]
    TensorT<T> wq;         // [E, E]
    TensorT<T> wk, wv;     // [kv_train_heads * head_dim, E]
    TensorT<T> wk_test, wv_test;  // [head_dim, E], the single test-path KV head
    TensorT<T> wo;         // [E, E]
    ops::ScaleMlpT<T> qass;
    TensorT<T> norm_ffn;
    TensorT<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <class T>
struct ModelWeightsT {
    TensorT<T> cell_proj_w;  // [D, 2 * group_size]
    TensorT<T> cell_proj_b;  // [D]
    TensorT<T> e_col;        // [c_max, D] orthogonal label embeddings (column encoder)
    TensorT<T> target_w, target_b;  // [D] each: regression target embedding, cell level

    std::vector<Stage1BlockT<T>> stage1;
    TensorT<T> stage1_norm;  // [D]

    TensorT<T> cls_tokens;   // [n_cls, D]
    std::vector<BlockWeightsT<T>> stage2;
    TensorT<T> stage2_norm;  // [D]

    TensorT<T> e_icl;        // [c_max, E] orthogonal label embeddings (ICL stage)
    TensorT<T> target_icl_w, target_icl_b;  // [E] each
    std::vector<IclBlockT<T>> icl;
    TensorT<T> icl_norm;     // [E]

    TensorT<T> dec_wq, dec_wk;  // [decoder_heads * decoder_head_dim, E]
    ops::ScaleMlpT<T> dec_qass;

    TensorT<T> head_w1;  // [ff*E, E] regression head
    TensorT<T> head_b1;  // [ff*E]
    TensorT<T> head_w2;  // [n_buckets, ff*E]
    TensorT<T> head_b2;  // [n_buckets]
};

using ModelWeights = ModelWeightsT<float>;

// Rows orthonormal when c <= d; otherwise unit-norm rows with the maximal
// pairwise |dot| driven down by frame-potential descent.
DTensor init_orthogonal_label_embeddings(std::size_t c, std::size_t d, std::uint64_t seed);

ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed);
ModelWeightsT<double> widen(const ModelWeights& w);

// Enumerates every tensor with its stable serialization name.
template <class T>
void for_each_tensor(ModelWeightsT<T>& w,
                     const std::function<void(const std::string&, TensorT<T>&)>& fn);

// Weights file, magic "TPF3": version, record count, then per record the
// name, dtype tag, rank, dims, and row-major little-endian payload. The
// loader validates every shape against the config.
void save_weights(const std::string& path, const ModelConfig& cfg, const ModelWeights& w);
ModelWeights load_weights(const std::string& path, const ModelConfig& cfg);

}  // namespace tfe::model
