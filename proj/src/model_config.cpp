#include "tfe/model_config.hpp"

#include <cstring>

namespace tfe::model {

void ModelConfig::validate() const {
    if (embed_dim == 0 || feature_group_size == 0) throw ConfigError("config: zero dimension");
    if (embed_dim % dist_heads != 0) throw ConfigError("config: embed_dim must divide by dist_heads");
    if (embed_dim % agg_heads != 0) throw ConfigError("config: embed_dim must divide by agg_heads");
    if ((embed_dim / agg_heads) % 2 != 0) {
        throw ConfigError("config: aggregation head dim must be even for rope");
    }
    if (icl_emsize() % icl_heads != 0) {
        throw ConfigError("config: icl_emsize must divide by icl_heads");
    }
    if (icl_kv_heads_train != 1 && icl_kv_heads_train != icl_heads) {
        throw ConfigError("config: icl_kv_heads_train must be 1 or icl_heads");
    }
    if (icl_kv_heads_test != 1 && icl_kv_heads_test != icl_heads) {
        throw ConfigError("config: icl_kv_heads_test must be 1 or icl_heads");
    }
    if (c_max < 2) throw ConfigError("config: c_max must be >= 2");
    if (n_buckets < 2) throw ConfigError("config: n_buckets must be >= 2");
    if (dist_blocks == 0 || agg_blocks == 0 || icl_layers == 0) {
        throw ConfigError("config: zero block count");
    }
    if (n_inducing == 0 || n_cls_tokens == 0 || decoder_heads == 0 || decoder_head_dim == 0) {
        throw ConfigError("config: zero attention size");
    }
    if (!(rope_base > 0)) throw ConfigError("config: rope_base must be positive");
}

std::uint64_t ModelConfig::hash() const {
    const std::uint64_t fields[] = {
        embed_dim, feature_group_size, dist_blocks, dist_heads, n_inducing,
        agg_blocks, agg_heads, n_cls_tokens,
        static_cast<std::uint64_t>(rope_base), icl_layers, icl_heads,
        icl_kv_heads_train, icl_kv_heads_test, ff_factor, c_max,
        decoder_heads, decoder_head_dim, n_buckets, qass_hidden,
        static_cast<std::uint64_t>(task)};
    return prior::fnv1a(fields, sizeof(fields));
}

ModelConfig ModelConfig::defaults(prior::Task task) {
    ModelConfig cfg;
    cfg.task = task;
    return cfg;
}

ModelConfig ModelConfig::micro(prior::Task task) {
    ModelConfig cfg;
    cfg.embed_dim = 8;
    cfg.dist_blocks = 1;
    cfg.dist_heads = 2;
    cfg.n_inducing = 4;
    cfg.agg_blocks = 1;
    cfg.agg_heads = 2;
    cfg.n_cls_tokens = 2;
    cfg.icl_layers = 2;
    cfg.icl_heads = 2;
    cfg.icl_kv_heads_train = 2;
    cfg.icl_kv_heads_test = 1;
    cfg.decoder_heads = 2;
    cfg.decoder_head_dim = 8;
    cfg.n_buckets = 64;
    cfg.qass_hidden = 8;
    cfg.task = task;
    return cfg;
}

}  // namespace tfe::model
