#include "tfe/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tfe/kernels.hpp"

namespace tfe::infer {

using model::DatasetView;
using model::ForwardResult;
using model::ModelConfig;
using model::ModelWeights;
using model::RowRange;

ChunkPlan plan_chunks(std::size_t n_train, std::size_t n_test, std::size_t chunk_size,
                      std::optional<bool> override_enabled) {
    if (chunk_size < 1) throw ConfigError("chunk plan: chunk_size must be >= 1");
    ChunkPlan plan;
    plan.chunk_size = chunk_size;
    plan.enabled = override_enabled ? *override_enabled : (n_train + n_test > 2048);
    const std::size_t total = n_train + n_test;
    for (std::size_t r0 = 0; r0 < total; r0 += chunk_size) {
        plan.chunk_ranges.push_back(RowRange{r0, std::min(r0 + chunk_size, total)});
    }
    if (plan.chunk_ranges.empty()) plan.chunk_ranges.push_back(RowRange{0, 0});
    return plan;
}

ForwardResult forward_chunked(const ModelConfig& cfg, const ModelWeights& w,
                              const DatasetView& view, const ChunkPlan& plan,
                              alloc::AllocStats* pre_icl_stats,
                              std::span<const std::size_t> chunk_order) {
    const std::size_t r_count = view.n_rows();
    const std::size_t n_train = view.n_train();
    const std::size_t n_groups = cfg.n_groups(view.n_features());
    const std::size_t row_chunk = plan.enabled ? plan.chunk_size : std::max<std::size_t>(r_count, 1);
    const std::size_t col_batch = plan.enabled ? std::min(plan.col_batch, n_groups) : n_groups;

    Tensor row_embeds({r_count, cfg.icl_emsize()});
    alloc::AllocScope scope;

    std::vector<RowRange> train_chunks;
    for (std::size_t r0 = 0; r0 < n_train; r0 += row_chunk) {
        train_chunks.push_back(RowRange{r0, std::min(r0 + row_chunk, n_train)});
    }
    const auto inducing = model::stage1_inducing_states(cfg, w, view, train_chunks, col_batch);
    const std::span<const Tensor> inducing_span{inducing.data(), inducing.size()};

    std::vector<RowRange> ranges;
    for (std::size_t r0 = 0; r0 < r_count; r0 += row_chunk) {
        ranges.push_back(RowRange{r0, std::min(r0 + row_chunk, r_count)});
    }
    if (chunk_order.empty()) {
        for (const RowRange& range : ranges) {
            model::pre_icl_rows(cfg, w, view, range, inducing_span, row_embeds);
        }
    } else {
        if (chunk_order.size() != ranges.size()) {
            throw DimError("forward_chunked: chunk order length mismatch");
        }
        for (std::size_t idx : chunk_order) {
            model::pre_icl_rows(cfg, w, view, ranges.at(idx), inducing_span, row_embeds);
        }
    }
    const auto stats = scope.finish();
    if (pre_icl_stats != nullptr) *pre_icl_stats = stats;

    auto final_embeds = model::stage3_icl(cfg, w, row_embeds, view);
    return model::decode_result(cfg, w, view, std::move(final_embeds));
}

std::uint64_t estimator_signature(const prep::EstimatorConfig& config) {
    const std::string text = prep::serialize_configs({&config, 1});
    return prior::fnv1a(text.data(), text.size());
}

KvCache build_kv_cache(const ModelConfig& cfg, const ModelWeights& w,
                       const DatasetView& train_view, std::uint64_t view_signature,
                       const ChunkPlan* plan) {
    if (train_view.n_test() != 0) throw ConfigError("cache build: view must be train-only");
    const std::size_t n = train_view.n_train();
    if (n == 0) throw ConfigError("cache build: empty train set");

    const ChunkPlan local = plan != nullptr ? *plan : plan_chunks(n, 0);
    const std::size_t row_chunk = local.enabled ? local.chunk_size : n;
    const std::size_t n_groups = cfg.n_groups(train_view.n_features());
    const std::size_t col_batch = local.enabled ? std::min(local.col_batch, n_groups) : n_groups;

    auto [row_embeds, inducing] = model::run_pre_icl(cfg, w, train_view, row_chunk, col_batch);

    KvCache cache;
    model::IclCaptureT<float> capture;
    cache.final_train_embeds = model::stage3_icl(cfg, w, row_embeds, train_view, &capture);
    cache.icl = std::move(capture);
    cache.inducing_states = std::move(inducing);
    cache.config_hash = cfg.hash();
    cache.view_signature = view_signature;
    cache.n_train = n;
    cache.task = train_view.task;
    if (train_view.task == prior::Task::classification) {
        const std::size_t c = train_view.n_classes;
        cache.train_onehot = Tensor({n, c});
        for (std::size_t i = 0; i < n; ++i) {
            cache.train_onehot(i, static_cast<std::size_t>(train_view.y_class[i])) = 1.0f;
        }
    } else {
        std::vector<double> y(train_view.y_target.begin(), train_view.y_target.end());
        cache.bar_edges = model::bar_edges_from_targets(y, cfg.n_buckets);
    }
    return cache;
}

ForwardResult predict_cached(const KvCache& cache, const ModelConfig& cfg,
                             const ModelWeights& w, const DatasetView& test_view) {
    if (cache.config_hash != cfg.hash()) throw ConfigError("cache: model config mismatch");
    if (test_view.n_train() != 0) throw ConfigError("cache predict: view must be test-only");
    const std::size_t m = test_view.n_rows();

    const ChunkPlan plan = plan_chunks(cache.n_train, m);
    const std::size_t row_chunk = plan.enabled ? plan.chunk_size : std::max<std::size_t>(m, 1);

    Tensor row_embeds({m, cfg.icl_emsize()});
    const std::span<const Tensor> inducing{cache.inducing_states.data(),
                                           cache.inducing_states.size()};
    for (std::size_t r0 = 0; r0 < m; r0 += row_chunk) {
        model::pre_icl_rows(cfg, w, test_view, RowRange{r0, std::min(r0 + row_chunk, m)},
                            inducing, row_embeds);
    }
    auto final_test = model::stage3_icl_test_path(cfg, w, row_embeds, cache.icl, cache.n_train);

    ForwardResult result;
    if (cache.task == prior::Task::classification) {
        result.probs = model::many_class_decode(cfg, w, cache.final_train_embeds,
                                                cache.train_onehot, final_test);
    } else {
        result.bars = model::regression_decode(cfg, w, final_test, cache.bar_edges);
        result.bar_edges = cache.bar_edges;
    }
    result.final_embeds = std::move(final_test);
    return result;
}

std::uint64_t estimate_cache_bytes(const ModelConfig& cfg, std::uint64_t n_train,
                                   std::size_t bytes_per_scalar, std::size_t n_features) {
    if (bytes_per_scalar != 2 && bytes_per_scalar != 4 && bytes_per_scalar != 8) {
        throw ConfigError("cache size: bytes_per_scalar must be 2, 4, or 8");
    }
    const std::uint64_t bps = bytes_per_scalar;
    const std::uint64_t kv = static_cast<std::uint64_t>(cfg.icl_layers) * n_train * 2 *
                             cfg.icl_head_dim() * bps;
    const std::uint64_t embeds = n_train * cfg.icl_emsize() * bps;
    const std::uint64_t inducing = static_cast<std::uint64_t>(cfg.dist_blocks) *
                                   cfg.n_groups(n_features) * cfg.n_inducing * cfg.embed_dim *
                                   bps;
    return kv + embeds + inducing;
}

namespace {

constexpr char kCacheMagic[4] = {'T', 'P', 'F', 'C'};
constexpr std::uint32_t kCacheVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    out.push_back(0);  // f32
    out.push_back(static_cast<char>(t.rank()));
    for (std::size_t dim : t.shape()) put_u64(out, dim);
    out.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(float));
}

struct CacheReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IoError("TPFC: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        }
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        }
        return v;
    }
    std::pair<std::string, Tensor> tensor() {
        const std::uint32_t name_len = u32();
        need(name_len);
        std::string name = buf.substr(pos, name_len);
        pos += name_len;
        need(2);
        const auto dtype = static_cast<std::uint8_t>(buf[pos++]);
        const auto rank = static_cast<std::uint8_t>(buf[pos++]);
        if (dtype != 0) throw IoError("TPFC: unsupported dtype");
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = u64();
        Tensor t(shape);
        const std::size_t n_bytes = t.numel() * sizeof(float);
        need(n_bytes);
        std::memcpy(t.data(), buf.data() + pos, n_bytes);
        pos += n_bytes;
        return {std::move(name), std::move(t)};
    }
};

}  // namespace

void save_cache(const std::string& path, const KvCache& cache) {
    std::string out;
    out.append(kCacheMagic, 4);
    put_u32(out, kCacheVersion);
    put_u64(out, cache.config_hash);
    put_u64(out, cache.view_signature);
    put_u64(out, cache.n_train);
    out.push_back(static_cast<char>(cache.task));
    put_u32(out, static_cast<std::uint32_t>(cache.inducing_states.size()));
    put_u32(out, static_cast<std::uint32_t>(cache.icl.kv.size()));
    put_u32(out, static_cast<std::uint32_t>(cache.bar_edges.size()));
    for (std::size_t b = 0; b < cache.inducing_states.size(); ++b) {
        put_tensor(out, "inducing." + std::to_string(b), cache.inducing_states[b]);
    }
    for (std::size_t l = 0; l < cache.icl.kv.size(); ++l) {
        put_tensor(out, "icl_kv." + std::to_string(l), cache.icl.kv[l]);
    }
    put_tensor(out, "final_embeds", cache.final_train_embeds);
    if (cache.task == prior::Task::classification) {
        put_tensor(out, "onehot", cache.train_onehot);
    } else {
        for (double edge : cache.bar_edges) {
            std::uint64_t bits;
            std::memcpy(&bits, &edge, 8);
            put_u64(out, bits);
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed: " + path);
}

KvCache load_cache(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < 4 || std::memcmp(buf.data(), kCacheMagic, 4) != 0) {
        throw IoError("TPFC: bad magic");
    }
    CacheReader r{buf, 4};
    if (r.u32() != kCacheVersion) throw IoError("TPFC: unsupported version");
    KvCache cache;
    cache.config_hash = r.u64();
    cache.view_signature = r.u64();
    cache.n_train = r.u64();
    r.need(1);
    cache.task = static_cast<prior::Task>(static_cast<std::uint8_t>(buf[r.pos++]));
    const std::uint32_t n_inducing = r.u32();
    const std::uint32_t n_layers = r.u32();
    const std::uint32_t n_edges = r.u32();
    for (std::uint32_t b = 0; b < n_inducing; ++b) {
        auto [name, t] = r.tensor();
        if (name != "inducing." + std::to_string(b)) throw IoError("TPFC: unexpected record");
        cache.inducing_states.push_back(std::move(t));
    }
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        auto [name, t] = r.tensor();
        if (name != "icl_kv." + std::to_string(l)) throw IoError("TPFC: unexpected record");
        cache.icl.kv.push_back(std::move(t));
    }
    auto [name, t] = r.tensor();
    if (name != "final_embeds") throw IoError("TPFC: unexpected record");
    cache.final_train_embeds = std::move(t);
    if (cache.task == prior::Task::classification) {
        auto [oname, ot] = r.tensor();
        if (oname != "onehot") throw IoError("TPFC: unexpected record");
        cache.train_onehot = std::move(ot);
    } else {
        cache.bar_edges.resize(n_edges);
        for (double& edge : cache.bar_edges) {
            const std::uint64_t bits = r.u64();
            std::memcpy(&edge, &bits, 8);
        }
    }
    if (r.pos != buf.size()) throw IoError("TPFC: trailing bytes");
    return cache;
}

EnsembleResult ensemble_predict(const ModelConfig& cfg, const ModelWeights& w,
                                const prior::Dataset& ds, std::size_t n_estimators,
                                std::uint64_t seed, std::size_t chunk_size,
                                std::optional<bool> chunk_override) {
    if (n_estimators < 1) throw ConfigError("ensemble: need at least one estimator");
    const auto configs = prep::build_estimator_configs(n_estimators, ds.n_features, 200, seed);
    const std::size_t m = ds.n_test();

    EnsembleResult out;
    std::vector<double> prob_acc;
    std::vector<std::vector<double>> bar_acc;
    const double weight = 1.0 / static_cast<double>(n_estimators);

    for (const auto& est : configs) {
        const auto built = prep::build_view(ds, est);
        const ChunkPlan plan =
            plan_chunks(built.view.n_train(), built.view.n_test(), chunk_size, chunk_override);
        const auto result = forward_chunked(cfg, w, built.view, plan);

        if (ds.task == prior::Task::classification) {
            const std::size_t c = ds.n_classes;
            if (prob_acc.empty()) prob_acc.assign(m * c, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t orig = 0; orig < c; ++orig) {
                    prob_acc[i * c + orig] +=
                        weight * result.probs(i, built.label_perm[orig]);
                }
            }
        } else {
            if (out.bars.empty()) {
                out.bars = result.bars;
                out.target_mean = built.view.target_mean;
                out.target_std = built.view.target_std;
                bar_acc.assign(m, std::vector<double>(cfg.n_buckets, 0.0));
            }
            for (std::size_t i = 0; i < m; ++i) {
                const auto p = result.bars[i].probs();
                for (std::size_t b = 0; b < cfg.n_buckets; ++b) {
                    bar_acc[i][b] += weight * p[b];
                }
            }
        }
        if (out.test_row_ids.empty()) {
            const std::size_t n_train = built.view.n_train();
            for (std::size_t i = 0; i < m; ++i) {
                out.test_row_ids.push_back(built.view.row_ids[n_train + i]);
            }
        }
    }

    if (ds.task == prior::Task::classification) {
        out.probs = DTensor::from({m, ds.n_classes}, std::move(prob_acc));
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t b = 0; b < cfg.n_buckets; ++b) {
                out.bars[i].logits[b] = std::log(std::max(bar_acc[i][b], 1e-300));
            }
        }
    }
    return out;
}

double decode_quantile(const model::BarDistribution& bar, double q) { return bar.quantile(q); }

double pinball_loss(double y_true, double y_pred, double q) {
    if (!(q > 0.0 && q < 1.0)) throw DimError("pinball loss: q must lie in (0, 1)");
    return y_true >= y_pred ? q * (y_true - y_pred) : (1.0 - q) * (y_pred - y_true);
}

}  // namespace tfe::infer
