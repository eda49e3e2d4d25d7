// tfe command-line tool: synthetic dataset generation, prediction with the
// chunked/cached inference paths, invariant verification, and benchmarking.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>
#include <vector>

#include "tfe/bench.hpp"
#include "tfe/inference.hpp"
#include "tfe/model.hpp"
#include "tfe/preprocess.hpp"
#include "tfe/rng.hpp"
#include "tfe/scm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tfe;

namespace {

std::size_t worker_limit() {
    if (const char* env = std::getenv("TFE_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

// ---------------------------------------------------------------------------
// generate

prior::PriorHyperparams hyperparams_from_json(const json& j) {
    prior::PriorHyperparams hp;
    if (j.contains("preset")) hp = prior::preset_hyperparams(j.at("preset").get<std::string>());
    if (j.contains("n_rows")) hp.n_rows = j.at("n_rows").get<std::size_t>();
    if (j.contains("n_features")) hp.n_features = j.at("n_features").get<std::size_t>();
    if (j.contains("n_nodes")) hp.n_nodes = j.at("n_nodes").get<std::size_t>();
    if (j.contains("graph_algorithm")) {
        const auto name = j.at("graph_algorithm").get<std::string>();
        if (name == "scale_free") hp.graph_algorithm = prior::GraphAlgorithm::scale_free;
        else if (name == "layered") hp.graph_algorithm = prior::GraphAlgorithm::layered;
        else if (name == "random_dag") hp.graph_algorithm = prior::GraphAlgorithm::random_dag;
        else throw ConfigError("unknown graph_algorithm: " + name);
    }
    if (j.contains("task")) {
        const auto name = j.at("task").get<std::string>();
        if (name == "classification") hp.task = prior::Task::classification;
        else if (name == "regression") hp.task = prior::Task::regression;
        else throw ConfigError("unknown task: " + name);
    }
    if (j.contains("n_classes")) hp.n_classes = j.at("n_classes").get<std::uint32_t>();
    if (j.contains("noise_family")) {
        const auto name = j.at("noise_family").get<std::string>();
        if (name == "gaussian") hp.noise_family = prior::NoiseFamily::gaussian;
        else if (name == "uniform") hp.noise_family = prior::NoiseFamily::uniform;
        else if (name == "mixed") hp.noise_family = prior::NoiseFamily::mixed;
        else throw ConfigError("unknown noise_family: " + name);
    }
    if (j.contains("ood_mode")) hp.ood_mode = j.at("ood_mode").get<bool>();
    if (j.contains("missing_rate")) hp.missing_rate = j.at("missing_rate").get<double>();
    if (j.contains("categorical_fraction")) {
        hp.categorical_fraction = j.at("categorical_fraction").get<double>();
    }
    if (j.contains("train_fraction")) hp.train_fraction = j.at("train_fraction").get<double>();
    if (j.contains("edge_prob")) hp.edge_prob = j.at("edge_prob").get<double>();
    if (j.contains("n_layers")) hp.n_layers = j.at("n_layers").get<std::size_t>();
    return hp;
}

json hyperparams_to_json(const prior::PriorHyperparams& hp) {
    json j;
    j["n_rows"] = hp.n_rows;
    j["n_features"] = hp.n_features;
    j["n_nodes"] = hp.n_nodes;
    j["graph_algorithm"] = hp.graph_algorithm == prior::GraphAlgorithm::scale_free ? "scale_free"
                           : hp.graph_algorithm == prior::GraphAlgorithm::layered  ? "layered"
                                                                                   : "random_dag";
    j["task"] = hp.task == prior::Task::classification ? "classification" : "regression";
    j["n_classes"] = hp.n_classes;
    j["noise_family"] = hp.noise_family == prior::NoiseFamily::gaussian  ? "gaussian"
                        : hp.noise_family == prior::NoiseFamily::uniform ? "uniform"
                                                                         : "mixed";
    j["ood_mode"] = hp.ood_mode;
    j["missing_rate"] = hp.missing_rate;
    j["categorical_fraction"] = hp.categorical_fraction;
    j["train_fraction"] = hp.train_fraction;
    if (hp.edge_prob) j["edge_prob"] = *hp.edge_prob;
    if (hp.n_layers) j["n_layers"] = *hp.n_layers;
    return j;
}

struct GenerateOptions {
    std::string preset;
    std::string hp_file;
    std::uint64_t seed = 0;
    std::size_t count = 1;
    std::string out_dir;
    bool csv = false;
};

int cmd_generate(const GenerateOptions& opt) {
    prior::PriorHyperparams hp;
    if (!opt.hp_file.empty()) {
        std::ifstream f(opt.hp_file);
        if (!f) throw IoError("cannot open hp file: " + opt.hp_file);
        json j;
        f >> j;
        hp = hyperparams_from_json(j);
    } else if (!opt.preset.empty()) {
        hp = prior::preset_hyperparams(opt.preset);
    } else {
        throw ConfigError("generate: need --preset or --hp-file");
    }
    hp.seed = opt.seed;
    hp.validate();

    fs::create_directories(opt.out_dir);
    std::vector<prior::Dataset> datasets(opt.count);
    std::atomic<std::size_t> next{0};
    const std::size_t n_workers = std::min(worker_limit(), opt.count);
    std::vector<std::thread> workers;
    workers.reserve(n_workers);
    for (std::size_t t = 0; t < n_workers; ++t) {
        workers.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < opt.count; i = next.fetch_add(1)) {
                prior::PriorHyperparams local = hp;
                local.seed = opt.seed + i;
                datasets[i] = prior::generate_dataset(local);
            }
        });
    }
    for (auto& t : workers) t.join();

    json manifest;
    manifest["hp"] = hyperparams_to_json(hp);
    if (!opt.preset.empty()) manifest["preset"] = opt.preset;
    manifest["seed"] = opt.seed;
    manifest["count"] = opt.count;
    manifest["files"] = json::array();
    for (std::size_t i = 0; i < opt.count; ++i) {
        const std::string name = "data_" + std::to_string(opt.seed + i) + ".tfd";
        const fs::path path = fs::path(opt.out_dir) / name;
        prior::save_tfd(datasets[i], path.string());
        if (opt.csv) {
            prior::export_csv(datasets[i],
                              (fs::path(opt.out_dir) /
                               ("data_" + std::to_string(opt.seed + i) + ".csv"))
                                  .string());
        }
        char checksum[32];
        std::snprintf(checksum, sizeof(checksum), "%016llx",
                      static_cast<unsigned long long>(prior::dataset_checksum(datasets[i])));
        manifest["files"].push_back({{"path", name},
                                     {"checksum", checksum},
                                     {"seed", opt.seed + i},
                                     {"n_rows", datasets[i].n_rows},
                                     {"n_features", datasets[i].n_features}});
    }
    std::ofstream mf(fs::path(opt.out_dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    std::cout << "generated " << opt.count << " dataset(s) into " << opt.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictOptions {
    std::string data;
    std::string weights;
    std::uint64_t init_seed = 0;
    std::string profile = "micro";
    std::size_t estimators = 1;
    std::size_t chunk_size = 2048;
    std::string chunking = "auto";  // auto | on | off
    std::string cache_path;
    std::string out;
};

model::ModelConfig profile_config(const std::string& profile, prior::Task task) {
    if (profile == "micro") return model::ModelConfig::micro(task);
    if (profile == "full") return model::ModelConfig::defaults(task);
    throw ConfigError("unknown profile: " + profile);
}

std::optional<bool> chunk_override(const std::string& mode) {
    if (mode == "auto") return std::nullopt;
    if (mode == "on") return true;
    if (mode == "off") return false;
    throw ConfigError("unknown chunking mode: " + mode);
}

void write_prediction_csv(const std::string& path, const prior::Dataset& ds,
                          const std::vector<std::size_t>& row_ids, const DTensor& probs,
                          const std::vector<model::BarDistribution>& bars, double target_mean,
                          double target_std) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    char buf[64];
    if (ds.task == prior::Task::classification) {
        f << "row_id";
        for (std::uint32_t c = 0; c < ds.n_classes; ++c) f << ",p" << c;
        f << "\n";
        for (std::size_t i = 0; i < row_ids.size(); ++i) {
            f << row_ids[i];
            for (std::uint32_t c = 0; c < ds.n_classes; ++c) {
                std::snprintf(buf, sizeof(buf), "%.9g", probs(i, c));
                f << "," << buf;
            }
            f << "\n";
        }
    } else {
        f << "row_id";
        for (int q = 1; q <= 9; ++q) f << ",q" << q * 10;
        f << "\n";
        for (std::size_t i = 0; i < row_ids.size(); ++i) {
            f << row_ids[i];
            for (int q = 1; q <= 9; ++q) {
                const double z = infer::decode_quantile(bars[i], 0.1 * q);
                std::snprintf(buf, sizeof(buf), "%.9g", target_mean + target_std * z);
                f << "," << buf;
            }
            f << "\n";
        }
    }
}

int cmd_predict(const PredictOptions& opt) {
    const prior::Dataset ds = prior::load_tfd(opt.data);
    model::ModelConfig cfg = profile_config(opt.profile, ds.task);
    if (ds.task == prior::Task::classification && ds.n_classes > cfg.c_max) {
        throw UnsupportedError("dataset class count exceeds the supported ceiling");
    }
    const model::ModelWeights w = opt.weights.empty()
                                      ? model::init_weights(cfg, opt.init_seed)
                                      : model::load_weights(opt.weights, cfg);
    const auto override_flag = chunk_override(opt.chunking);

    if (!opt.cache_path.empty()) {
        if (opt.estimators != 1) {
            throw ConfigError("--cache applies to single-estimator prediction");
        }
        const auto configs = prep::build_estimator_configs(1, ds.n_features, 200, opt.init_seed);
        const auto built = prep::build_view(ds, configs[0]);
        const std::uint64_t signature = infer::estimator_signature(built.config);
        const auto train_view = model::subset_rows(built.view, true);
        const auto test_view = model::subset_rows(built.view, false);

        infer::KvCache cache;
        if (fs::exists(opt.cache_path)) {
            cache = infer::load_cache(opt.cache_path);
            if (cache.view_signature != signature) {
                throw ConfigError("cache: estimator config mismatch");
            }
            std::cout << "cache: reusing " << opt.cache_path << "\n";
        } else {
            const auto plan =
                infer::plan_chunks(train_view.n_rows(), 0, opt.chunk_size, override_flag);
            cache = infer::build_kv_cache(cfg, w, train_view, signature, &plan);
            infer::save_cache(opt.cache_path, cache);
            std::cout << "cache: built and saved " << opt.cache_path << "\n";
        }
        const auto result = infer::predict_cached(cache, cfg, w, test_view);

        DTensor probs;
        std::vector<std::size_t> row_ids(test_view.row_ids);
        if (ds.task == prior::Task::classification) {
            // Undo the estimator's label permutation.
            probs = DTensor({test_view.n_rows(), ds.n_classes});
            for (std::size_t i = 0; i < test_view.n_rows(); ++i) {
                for (std::uint32_t orig = 0; orig < ds.n_classes; ++orig) {
                    probs(i, orig) = result.probs(i, built.label_perm[orig]);
                }
            }
        }
        write_prediction_csv(opt.out, ds, row_ids, probs, result.bars,
                             built.view.target_mean, built.view.target_std);
    } else {
        const auto result = infer::ensemble_predict(cfg, w, ds, opt.estimators, opt.init_seed,
                                                    opt.chunk_size, override_flag);
        write_prediction_csv(opt.out, ds, result.test_row_ids, result.probs, result.bars,
                             result.target_mean, result.target_std);
    }
    std::cout << "wrote predictions to " << opt.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// verify

struct Invariant {
    std::string name;
    double tolerance = 0.0;
    double measured = 0.0;
    bool pass = false;
};

struct MicroTask {
    prior::Dataset ds;
    prep::ViewBuild built;
};

MicroTask micro_task(std::uint64_t seed, std::size_t n_rows, std::size_t n_features,
                     prior::Task kind = prior::Task::classification) {
    prior::PriorHyperparams hp;
    hp.task = kind;
    hp.n_rows = n_rows;
    hp.n_features = n_features;
    hp.n_nodes = n_features + 4;
    hp.n_classes = 3;
    hp.missing_rate = 0.05;
    hp.seed = seed;
    MicroTask t{prior::generate_dataset(hp), {}};
    const auto configs = prep::build_estimator_configs(1, t.ds.n_features, 200, seed + 1);
    t.built = prep::build_view(t.ds, configs[0]);
    return t;
}

double rel_diff_probs(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = std::abs(static_cast<double>(a(i)) - static_cast<double>(b(i)));
        worst = std::max(worst, d / (std::abs(static_cast<double>(b(i))) + 1e-9));
    }
    return worst;
}

std::vector<Invariant> verify_chunking() {
    std::vector<Invariant> out;
    const model::ModelConfig cfg = model::ModelConfig::micro();
    const auto w = model::init_weights(cfg, 1);

    double worst_rel = 0.0, worst_order = 0.0;
    for (std::uint64_t seed : {10, 11, 12}) {
        const auto task = micro_task(seed, 40, 5);
        const auto reference = model::forward(cfg, w, task.built.view);
        for (std::size_t chunk : {std::size_t(1), std::size_t(7), std::size_t(16)}) {
            const auto plan = infer::plan_chunks(task.built.view.n_train(),
                                                 task.built.view.n_test(), chunk, true);
            const auto chunked = infer::forward_chunked(cfg, w, task.built.view, plan);
            worst_rel = std::max(worst_rel, rel_diff_probs(chunked.probs, reference.probs));

            std::vector<std::size_t> order((task.built.view.n_rows() + chunk - 1) / chunk);
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = order.size() - 1 - i;
            const auto reordered =
                infer::forward_chunked(cfg, w, task.built.view, plan, nullptr, order);
            for (std::size_t i = 0; i < reordered.probs.numel(); ++i) {
                worst_order = std::max(worst_order,
                                       std::abs(static_cast<double>(reordered.probs(i)) -
                                                static_cast<double>(chunked.probs(i))));
            }
        }
    }
    out.push_back({"chunk_equivalence_rel", 1e-5, worst_rel, worst_rel < 1e-5});
    out.push_back({"chunk_order_independence", 0.0, worst_order, worst_order == 0.0});

    std::int64_t peaks[2] = {0, 0}, upeaks[2] = {0, 0};
    const std::size_t sizes[2] = {128, 512};
    for (int i = 0; i < 2; ++i) {
        const auto task = micro_task(13, sizes[i], 6);
        alloc::AllocStats stats{}, ustats{};
        infer::forward_chunked(cfg, w, task.built.view,
                               infer::plan_chunks(task.built.view.n_train(),
                                                  task.built.view.n_test(), 32, true),
                               &stats);
        infer::forward_chunked(cfg, w, task.built.view,
                               infer::plan_chunks(task.built.view.n_train(),
                                                  task.built.view.n_test(), 32, false),
                               &ustats);
        peaks[i] = stats.peak_bytes;
        upeaks[i] = ustats.peak_bytes;
    }
    const double flat = static_cast<double>(peaks[1]) / static_cast<double>(peaks[0]);
    const double growth = static_cast<double>(upeaks[1]) / static_cast<double>(upeaks[0]);
    out.push_back({"chunked_peak_flat_ratio", 1.5, flat, flat < 1.5});
    out.push_back({"unchunked_peak_growth_ratio", 2.0, growth, growth >= 2.0});
    return out;
}

std::vector<Invariant> verify_cache() {
    std::vector<Invariant> out;
    const model::ModelConfig cfg = model::ModelConfig::micro();
    const auto w = model::init_weights(cfg, 2);

    double worst_cold = 0.0, worst_repeat = 0.0, worst_io = 0.0;
    bool mismatch_detected = false;
    for (std::uint64_t seed : {20, 21, 22}) {
        const auto task = micro_task(seed, 30, 5);
        const auto cold = model::forward(cfg, w, task.built.view);
        const auto train_view = model::subset_rows(task.built.view, true);
        const auto test_view = model::subset_rows(task.built.view, false);
        const auto cache = infer::build_kv_cache(
            cfg, w, train_view, infer::estimator_signature(task.built.config));
        const auto warm = infer::predict_cached(cache, cfg, w, test_view);
        worst_cold = std::max(worst_cold, rel_diff_probs(warm.probs, cold.probs));

        const auto warm2 = infer::predict_cached(cache, cfg, w, test_view);
        for (std::size_t i = 0; i < warm.probs.numel(); ++i) {
            worst_repeat = std::max(worst_repeat,
                                    std::abs(static_cast<double>(warm.probs(i)) -
                                             static_cast<double>(warm2.probs(i))));
        }

        const std::string path = "/tmp/tfe_verify_cache.tpfc";
        infer::save_cache(path, cache);
        const auto loaded = infer::load_cache(path);
        const auto warm3 = infer::predict_cached(loaded, cfg, w, test_view);
        for (std::size_t i = 0; i < warm.probs.numel(); ++i) {
            worst_io = std::max(worst_io, std::abs(static_cast<double>(warm.probs(i)) -
                                                   static_cast<double>(warm3.probs(i))));
        }
        std::remove(path.c_str());

        model::ModelConfig other = cfg;
        other.icl_layers += 1;
        try {
            infer::predict_cached(cache, other, model::init_weights(other, 2), test_view);
        } catch (const ConfigError&) {
            mismatch_detected = true;
        }
    }
    out.push_back({"cache_equivalence_rel", 1e-5, worst_cold, worst_cold < 1e-5});
    out.push_back({"cache_repeat_identical", 0.0, worst_repeat, worst_repeat == 0.0});
    out.push_back({"cache_roundtrip_identical", 0.0, worst_io, worst_io == 0.0});
    out.push_back(
        {"cache_mismatch_detected", 1.0, mismatch_detected ? 1.0 : 0.0, mismatch_detected});
    return out;
}

std::vector<Invariant> verify_decoder(const std::string& fault) {
    std::vector<Invariant> out;
    const model::ModelConfig cfg = model::ModelConfig::micro();
    const auto w = model::init_weights(cfg, 3);
    CounterRng rng(33, 0);

    double worst_simplex = 0.0, worst_equivariance = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 4 + rng.uniform_int(12);
        const std::size_t m = 1 + rng.uniform_int(4);
        const std::size_t c = 2 + rng.uniform_int(6);
        Tensor train({n, cfg.icl_emsize()}), test({m, cfg.icl_emsize()}), onehot({n, c});
        for (std::size_t i = 0; i < train.numel(); ++i) {
            train(i) = static_cast<float>(rng.normal());
        }
        for (std::size_t i = 0; i < test.numel(); ++i) test(i) = static_cast<float>(rng.normal());
        std::vector<std::size_t> labels(n);
        for (std::size_t j = 0; j < n; ++j) {
            labels[j] = rng.uniform_int(c);
            onehot(j, labels[j]) = 1.0f;
        }
        const auto probs = model::many_class_decode(cfg, w, train, onehot, test);
        for (std::size_t i = 0; i < m; ++i) {
            double sum = 0;
            for (std::size_t cc = 0; cc < c; ++cc) sum += probs(i, cc);
            worst_simplex = std::max(worst_simplex, std::abs(sum - 1.0));
        }

        std::vector<std::size_t> perm(c);
        for (std::size_t i = 0; i < c; ++i) perm[i] = i;
        rng.shuffle(std::span<std::size_t>(perm));
        Tensor onehot_p({n, c});
        for (std::size_t j = 0; j < n; ++j) onehot_p(j, perm[labels[j]]) = 1.0f;
        const auto probs_p = model::many_class_decode(cfg, w, train, onehot_p, test);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t cc = 0; cc < c; ++cc) {
                worst_equivariance =
                    std::max(worst_equivariance,
                             std::abs(static_cast<double>(probs_p(i, perm[cc])) -
                                      static_cast<double>(probs(i, cc))));
            }
        }
    }
    out.push_back({"decoder_simplex", 1e-6, worst_simplex, worst_simplex < 1e-6});
    out.push_back({"decoder_class_permutation_equivariance", 1e-12, worst_equivariance,
                   worst_equivariance < 1e-12});

    bool rejected = false;
    try {
        Tensor train({1, cfg.icl_emsize()}, 0.1f), test({1, cfg.icl_emsize()}, 0.1f);
        Tensor onehot({1, 161});
        onehot(0, 160) = 1.0f;
        model::many_class_decode(cfg, w, train, onehot, test);
    } catch (const UnsupportedError&) {
        rejected = true;
    }
    out.push_back({"decoder_rejects_above_ceiling", 1.0, rejected ? 1.0 : 0.0, rejected});

    // Ensemble aggregation must invert the per-estimator label permutation.
    // The optional injected fault skips the inversion in the reference route
    // and must be caught by this check.
    const auto task = micro_task(34, 30, 5);
    const auto ens = infer::ensemble_predict(cfg, w, task.ds, 2, 35);
    const auto configs = prep::build_estimator_configs(2, task.ds.n_features, 200, 35);
    const std::size_t m = task.ds.n_test(), c = task.ds.n_classes;
    std::vector<double> reference(m * c, 0.0);
    for (const auto& est : configs) {
        const auto built = prep::build_view(task.ds, est);
        const auto r = model::forward(cfg, w, built.view);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t orig = 0; orig < c; ++orig) {
                const std::size_t col =
                    fault == "skip-label-perm-inverse" ? orig : built.label_perm[orig];
                reference[i * c + orig] += 0.5 * r.probs(i, col);
            }
        }
    }
    double worst_ens = 0.0;
    for (std::size_t i = 0; i < m * c; ++i) {
        worst_ens = std::max(worst_ens, std::abs(ens.probs(i) - reference[i]));
    }
    out.push_back({"ensemble_label_perm_inversion", 1e-8, worst_ens, worst_ens < 1e-8});
    return out;
}

std::vector<Invariant> verify_prior() {
    std::vector<Invariant> out;
    std::size_t checksum_mismatches = 0, cyclic = 0, order_violations = 0, label_violations = 0;
    for (const auto& name : prior::preset_names()) {
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
            prior::PriorHyperparams hp = prior::preset_hyperparams(name);
            hp.seed = 40 + seed;
            const auto a = prior::generate_dataset(hp);
            const auto b = prior::generate_dataset(hp);
            if (prior::dataset_checksum(a) != prior::dataset_checksum(b)) ++checksum_mismatches;

            const auto graph = prior::sample_dag(hp);
            // Independent DFS cycle check.
            std::vector<std::vector<std::size_t>> adj(graph.n_nodes);
            for (const auto& [p, ch] : graph.edges) adj[p].push_back(ch);
            std::vector<int> state(graph.n_nodes, 0);
            std::function<bool(std::size_t)> has_cycle = [&](std::size_t node) {
                state[node] = 1;
                for (std::size_t next : adj[node]) {
                    if (state[next] == 1) return true;
                    if (state[next] == 0 && has_cycle(next)) return true;
                }
                state[node] = 2;
                return false;
            };
            for (std::size_t v = 0; v < graph.n_nodes; ++v) {
                if (state[v] == 0 && has_cycle(v)) {
                    ++cyclic;
                    break;
                }
            }

            const auto order = prior::topological_order(graph);
            std::vector<std::size_t> pos(graph.n_nodes);
            for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
            for (const auto& [p, ch] : graph.edges) {
                if (pos[p] >= pos[ch]) ++order_violations;
            }

            if (a.task == prior::Task::classification) {
                for (double v : a.y) {
                    if (v < 0 || v >= 160) ++label_violations;
                }
            }
        }
    }
    out.push_back({"prior_regeneration_identical", 0.0,
                   static_cast<double>(checksum_mismatches), checksum_mismatches == 0});
    out.push_back({"prior_graphs_acyclic", 0.0, static_cast<double>(cyclic), cyclic == 0});
    out.push_back({"prior_topological_precedence", 0.0, static_cast<double>(order_violations),
                   order_violations == 0});
    out.push_back({"prior_labels_in_range", 0.0, static_cast<double>(label_violations),
                   label_violations == 0});
    return out;
}

int cmd_verify(const std::string& suite, const std::string& report_path,
               const std::string& fault) {
    std::vector<Invariant> results;
    if (suite == "chunking") results = verify_chunking();
    else if (suite == "cache") results = verify_cache();
    else if (suite == "decoder") results = verify_decoder(fault);
    else if (suite == "prior") results = verify_prior();
    else throw ConfigError("unknown suite: " + suite);

    bool all_pass = true;
    json report;
    report["suite"] = suite;
    report["invariants"] = json::array();
    for (const Invariant& inv : results) {
        all_pass &= inv.pass;
        std::printf("[%s] %-42s measured=%.3e tolerance=%.3e\n", inv.pass ? "PASS" : "FAIL",
                    inv.name.c_str(), inv.measured, inv.tolerance);
        report["invariants"].push_back({{"name", inv.name},
                                        {"tolerance", inv.tolerance},
                                        {"measured", inv.measured},
                                        {"pass", inv.pass}});
    }
    report["pass"] = all_pass;
    if (!report_path.empty()) {
        std::ofstream f(report_path);
        f << report.dump(2) << "\n";
    }
    return all_pass ? 0 : 4;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
    std::string grid = "rows=256,1024;feats=9";
    std::string modes = "unchunked,chunked,build_cache,cached_predict";
    std::uint64_t seed = 0;
    std::size_t test_rows = 100;
    std::size_t chunk_size = 2048;
    int reps = 5;
    int warmup = 1;
    std::string out;
};

std::vector<std::size_t> parse_sizes(const std::string& spec, const std::string& key) {
    const auto pos = spec.find(key + "=");
    if (pos == std::string::npos) throw ConfigError("bench grid: missing " + key + "=");
    std::vector<std::size_t> out;
    std::size_t i = pos + key.size() + 1;
    while (i < spec.size() && spec[i] != ';') {
        std::size_t value = 0;
        bool any = false;
        while (i < spec.size() && spec[i] >= '0' && spec[i] <= '9') {
            value = value * 10 + static_cast<std::size_t>(spec[i] - '0');
            ++i;
            any = true;
        }
        if (any) out.push_back(value);
        if (i < spec.size() && spec[i] == ',') ++i;
        else break;
    }
    if (out.empty()) throw ConfigError("bench grid: empty " + key + " list");
    return out;
}

int cmd_bench(const BenchOptions& opt) {
    const auto rows_list = parse_sizes(opt.grid, "rows");
    const auto feats_list = parse_sizes(opt.grid, "feats");
    std::vector<std::string> modes;
    {
        std::size_t start = 0;
        while (start < opt.modes.size()) {
            const auto comma = opt.modes.find(',', start);
            modes.push_back(opt.modes.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }

    std::ofstream f(opt.out);
    if (!f) throw IoError("cannot open for writing: " + opt.out);
    f << bench::bench_csv_header() << "\n";

    const model::ModelConfig base = model::ModelConfig::micro();
    for (std::size_t feats : feats_list) {
        for (std::size_t rows : rows_list) {
            prior::PriorHyperparams hp;
            hp.n_rows = rows + opt.test_rows;
            hp.n_features = feats;
            hp.n_nodes = feats + 4;
            hp.n_classes = 3;
            hp.train_fraction =
                static_cast<double>(rows) / static_cast<double>(rows + opt.test_rows);
            hp.seed = opt.seed;
            const auto ds = prior::generate_dataset(hp);
            const auto configs = prep::build_estimator_configs(1, feats, 200, opt.seed);
            const auto built = prep::build_view(ds, configs[0]);
            const auto w = model::init_weights(base, opt.seed);
            const auto train_view = model::subset_rows(built.view, true);
            const auto test_view = model::subset_rows(built.view, false);

            for (const std::string& mode : modes) {
                bench::BenchRecord rec;
                rec.n_train = built.view.n_train();
                rec.n_test = built.view.n_test();
                rec.n_features = feats;
                rec.mode = mode;
                rec.seed = opt.seed;

                std::function<void()> body;
                infer::KvCache cache;
                if (mode == "unchunked") {
                    const auto plan =
                        infer::plan_chunks(rec.n_train, rec.n_test, opt.chunk_size, false);
                    body = [&, plan] { infer::forward_chunked(base, w, built.view, plan); };
                } else if (mode == "chunked") {
                    const auto plan =
                        infer::plan_chunks(rec.n_train, rec.n_test, opt.chunk_size, true);
                    body = [&, plan] { infer::forward_chunked(base, w, built.view, plan); };
                } else if (mode == "build_cache") {
                    body = [&] {
                        infer::build_kv_cache(base, w, train_view,
                                              infer::estimator_signature(built.config));
                    };
                } else if (mode == "cached_predict") {
                    cache = infer::build_kv_cache(base, w, train_view,
                                                  infer::estimator_signature(built.config));
                    body = [&] { infer::predict_cached(cache, base, w, test_view); };
                } else {
                    throw ConfigError("unknown bench mode: " + mode);
                }

                const auto stats = alloc::alloc_scope(body);
                rec.peak_bytes = stats.peak_bytes;
                rec.wall_ms = bench::time_median_ms(opt.warmup, opt.reps, body);
                f << bench::bench_csv_row(rec) << "\n";
                std::cout << bench::bench_csv_row(rec) << "\n";
            }
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tfe: a desk-scale tabular in-context learning engine"};
    app.require_subcommand(1);

    GenerateOptions gen;
    auto* generate = app.add_subcommand("generate", "sample synthetic datasets from the prior");
    generate->add_option("--preset", gen.preset, "hyperparameter preset name");
    generate->add_option("--hp-file", gen.hp_file, "hyperparameter JSON file");
    generate->add_option("--seed", gen.seed, "base seed");
    generate->add_option("--count", gen.count, "number of datasets")->check(CLI::PositiveNumber);
    generate->add_option("--out", gen.out_dir, "output directory")->required();
    generate->add_flag("--csv", gen.csv, "also export CSV");

    PredictOptions pred;
    auto* predict = app.add_subcommand("predict", "fit-and-predict on a TFD1 dataset");
    predict->add_option("--data", pred.data, "TFD1 dataset path")->required();
    predict->add_option("--weights", pred.weights, "TPF3 weights path");
    predict->add_option("--init-seed", pred.init_seed, "weight/estimator seed");
    predict->add_option("--profile", pred.profile, "model profile: micro | full");
    predict->add_option("--estimators", pred.estimators, "ensemble size")
        ->check(CLI::PositiveNumber);
    predict->add_option("--chunk-size", pred.chunk_size, "row chunk size");
    predict->add_option("--chunking", pred.chunking, "auto | on | off");
    predict->add_option("--cache", pred.cache_path, "KV-cache path (built when absent)");
    predict->add_option("--out", pred.out, "prediction CSV path")->required();

    std::string suite, report_path, fault;
    auto* verify = app.add_subcommand("verify", "run an invariant suite");
    verify->add_option("--suite", suite, "chunking | cache | decoder | prior")->required();
    verify->add_option("--report", report_path, "JSON report path");
    verify->add_option("--inject-fault", fault, "fault name (tests the verifier)")->group("");

    BenchOptions ben;
    auto* bench_cmd = app.add_subcommand("bench", "time and measure the inference paths");
    bench_cmd->add_option("--grid", ben.grid, "e.g. rows=256,1024;feats=9");
    bench_cmd->add_option("--modes", ben.modes, "comma list of modes");
    bench_cmd->add_option("--seed", ben.seed, "dataset/weight seed");
    bench_cmd->add_option("--test-rows", ben.test_rows, "test rows per cell");
    bench_cmd->add_option("--chunk-size", ben.chunk_size, "row chunk size");
    bench_cmd->add_option("--reps", ben.reps, "timed repetitions");
    bench_cmd->add_option("--warmup", ben.warmup, "warmup repetitions");
    bench_cmd->add_option("--out", ben.out, "CSV output path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*generate) return cmd_generate(gen);
        if (*predict) return cmd_predict(pred);
        if (*verify) return cmd_verify(suite, report_path, fault);
        if (*bench_cmd) return cmd_bench(ben);
    } catch (const UnsupportedError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const RetryExhaustedError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
