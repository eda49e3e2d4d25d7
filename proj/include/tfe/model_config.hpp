#pragma once

#include <cstdint>

#include "tfe/dataset.hpp"

namespace tfe::model {

// Architectural hyperparameters. defaults() carries the released-scale
// values; micro() is the desk-scale test profile used by the oracle suites.
struct ModelConfig {
    std::size_t embed_dim = 128;
    std::size_t feature_group_size = 3;
    std::size_t dist_blocks = 3;
    std::size_t dist_heads = 8;
    std::size_t n_inducing = 128;
    std::size_t agg_blocks = 3;
    std::size_t agg_heads = 8;
    std::size_t n_cls_tokens = 4;
    double rope_base = 100000.0;
    std::size_t icl_layers = 24;
    std::size_t icl_heads = 8;
    std::size_t icl_kv_heads_train = 8;
    std::size_t icl_kv_heads_test = 1;
    std::size_t ff_factor = 2;
    std::uint32_t c_max = 160;
    std::size_t decoder_heads = 6;
    std::size_t decoder_head_dim = 64;
    std::size_t n_buckets = 5000;
    std::size_t qass_hidden = 64;
    prior::Task task = prior::Task::classification;

    std::size_t icl_emsize() const { return embed_dim * n_cls_tokens; }
    std::size_t icl_head_dim() const { return icl_emsize() / icl_heads; }
    std::size_t n_groups(std::size_t n_features) const {
        return (n_features + feature_group_size - 1) / feature_group_size;
    }

    void validate() const;
    std::uint64_t hash() const;

    static ModelConfig defaults(prior::Task task = prior::Task::classification);
    static ModelConfig micro(prior::Task task = prior::Task::classification);
};

}  // namespace tfe::model
