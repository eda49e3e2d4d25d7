#include "tfe/scm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <set>
#include <string>

#include "tfe/rng.hpp"

namespace tfe::prior {

namespace {

// Substream tags so every random decision has its own counter stream.
enum Stream : std::uint64_t {
    kGraph = 1,
    kNodeSpec = 2,
    kNoiseBase = 1000,       // + node index
    kSelect = 3,
    kBins = 4,
    kCategorical = 5,
    kMissing = 6,
    kLabelPerm = 7,
    kOod = 8,
};

constexpr std::uint32_t kMaxClasses = 160;
constexpr int kMaxAttempts = 4;
constexpr int kMaxBinRetries = 12;

struct NonFiniteSignal {};

double draw_noise_scale(CounterRng& rng, bool is_root) {
    return is_root ? rng.uniform(0.4, 1.2) : rng.uniform(0.02, 0.25);
}

NoiseSpec draw_noise(CounterRng& rng, NoiseFamily family, bool is_root) {
    NoiseSpec spec;
    switch (family) {
        case NoiseFamily::gaussian: spec.uniform = false; break;
        case NoiseFamily::uniform: spec.uniform = true; break;
        case NoiseFamily::mixed: spec.uniform = rng.bernoulli(0.5); break;
    }
    spec.scale = draw_noise_scale(rng, is_root);
    return spec;
}

void fill_node_specs(ScmGraph& g, const PriorHyperparams& hp) {
    CounterRng rng(hp.seed, kNodeSpec);
    const auto parents = g.parent_lists();
    g.node_specs.resize(g.n_nodes);
    for (std::size_t i = 0; i < g.n_nodes; ++i) {
        NodeSpec& spec = g.node_specs[i];
        const std::size_t k = parents[i].size();
        spec.noise = draw_noise(rng, hp.noise_family, k == 0);
        if (k == 0) continue;

        spec.mechanism = static_cast<Mechanism>(rng.uniform_int(7));
        switch (spec.mechanism) {
            case Mechanism::linear:
                for (std::size_t p = 0; p < k; ++p) spec.mech_params.push_back(rng.normal(0, 1));
                break;
            case Mechanism::polynomial:
                for (std::size_t p = 0; p < k; ++p) spec.mech_params.push_back(rng.normal(0, 1));
                spec.mech_params.push_back(rng.normal(0, 1));    // c1
                spec.mech_params.push_back(rng.normal(0, 0.5));  // c2
                spec.mech_params.push_back(rng.normal(0, 0.2));  // c3
                break;
            case Mechanism::product:
                for (std::size_t p = 0; p < k; ++p) spec.mech_params.push_back(rng.uniform(-0.5, 0.5));
                break;
            case Mechanism::maximum:
            case Mechanism::minimum:
                break;
            case Mechanism::gated: {
                spec.mech_params.push_back(rng.normal(0, 0.5));  // threshold
                const std::size_t rest = (k > 1) ? k - 1 : 1;
                for (std::size_t p = 0; p < 2 * rest; ++p) spec.mech_params.push_back(rng.normal(0, 1));
                break;
            }
            case Mechanism::distance:
                for (std::size_t p = 0; p < k; ++p) spec.mech_params.push_back(rng.normal(0, 1));
                break;
        }

        spec.activation = static_cast<Activation>(rng.uniform_int(4));
        if (spec.activation == Activation::sinusoid) {
            const double omega = std::pow(10.0, rng.uniform(-1.0, 2.0));  // log-uniform [0.1, 100]
            const double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            spec.act_params = {omega, phi};
        }
    }
}

// Weighted sample without replacement, weights proportional to out-degree + 1.
std::vector<std::size_t> preferential_parents(CounterRng& rng, std::size_t child,
                                              const std::vector<std::size_t>& out_degree,
                                              std::size_t count) {
    std::vector<std::size_t> pool(child);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    std::vector<std::size_t> chosen;
    for (std::size_t pick = 0; pick < count && !pool.empty(); ++pick) {
        double total = 0.0;
        for (std::size_t cand : pool) total += static_cast<double>(out_degree[cand] + 1);
        double u = rng.next_double() * total;
        std::size_t idx = 0;
        for (; idx + 1 < pool.size(); ++idx) {
            u -= static_cast<double>(out_degree[pool[idx]] + 1);
            if (u <= 0) break;
        }
        chosen.push_back(pool[idx]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(idx));
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

}  // namespace

void PriorHyperparams::validate() const {
    if (n_nodes < 2) throw ConfigError("prior: n_nodes must be >= 2");
    if (n_nodes < n_features + 1) throw ConfigError("prior: n_nodes must be >= n_features + 1");
    if (n_rows < 2) throw ConfigError("prior: n_rows must be >= 2");
    if (n_features < 1) throw ConfigError("prior: n_features must be >= 1");
    if (task == Task::classification && (n_classes < 2 || n_classes > kMaxClasses)) {
        throw ConfigError("prior: n_classes must lie in [2, 160]");
    }
    if (missing_rate < 0 || missing_rate > 1) throw ConfigError("prior: missing_rate outside [0,1]");
    if (categorical_fraction < 0 || categorical_fraction > 1) {
        throw ConfigError("prior: categorical_fraction outside [0,1]");
    }
    if (train_fraction <= 0 || train_fraction >= 1) {
        throw ConfigError("prior: train_fraction must lie in (0,1)");
    }
    if (edge_prob && (*edge_prob < 0 || *edge_prob > 1)) {
        throw ConfigError("prior: edge_prob outside [0,1]");
    }
}

std::vector<std::vector<std::size_t>> ScmGraph::parent_lists() const {
    std::vector<std::vector<std::size_t>> parents(n_nodes);
    for (const auto& [p, c] : edges) parents[c].push_back(p);
    for (auto& list : parents) std::sort(list.begin(), list.end());
    return parents;
}

ScmGraph sample_dag(const PriorHyperparams& hp) {
    hp.validate();
    CounterRng rng(hp.seed, kGraph);
    ScmGraph g;
    g.n_nodes = hp.n_nodes;
    const std::size_t n = hp.n_nodes;

    switch (hp.graph_algorithm) {
        case GraphAlgorithm::random_dag: {
            const double p = hp.edge_prob ? *hp.edge_prob : rng.uniform(0.15, 0.7);
            for (std::size_t j = 1; j < n; ++j) {
                for (std::size_t i = 0; i < j; ++i) {
                    if (rng.bernoulli(p)) g.edges.emplace_back(i, j);
                }
            }
            break;
        }
        case GraphAlgorithm::scale_free: {
            std::vector<std::size_t> out_degree(n, 0);
            for (std::size_t j = 1; j < n; ++j) {
                const std::size_t m = 1 + rng.uniform_int(std::min<std::size_t>(j, 3));
                for (std::size_t parent : preferential_parents(rng, j, out_degree, m)) {
                    g.edges.emplace_back(parent, j);
                    ++out_degree[parent];
                }
            }
            break;
        }
        case GraphAlgorithm::layered: {
            const std::size_t layer_count =
                hp.n_layers ? *hp.n_layers : 2 + rng.uniform_int(3);
            g.layers.resize(n);
            for (std::size_t i = 0; i < n; ++i) g.layers[i] = i * layer_count / n;
            for (std::size_t j = 0; j < n; ++j) {
                if (g.layers[j] == 0) continue;
                std::vector<std::size_t> earlier;
                for (std::size_t i = 0; i < n; ++i) {
                    if (g.layers[i] < g.layers[j]) earlier.push_back(i);
                }
                const std::size_t m = 1 + rng.uniform_int(std::min<std::size_t>(earlier.size(), 3));
                rng.shuffle(std::span<std::size_t>(earlier));
                std::vector<std::size_t> chosen(earlier.begin(),
                                                earlier.begin() + static_cast<std::ptrdiff_t>(m));
                std::sort(chosen.begin(), chosen.end());
                for (std::size_t parent : chosen) g.edges.emplace_back(parent, j);
            }
            break;
        }
    }
    std::sort(g.edges.begin(), g.edges.end());
    fill_node_specs(g, hp);
    return g;
}

std::vector<std::size_t> topological_order(const ScmGraph& graph) {
    const std::size_t n = graph.n_nodes;
    std::vector<std::size_t> in_degree(n, 0);
    std::vector<std::vector<std::size_t>> children(n);
    for (const auto& [p, c] : graph.edges) {
        if (p >= n || c >= n) throw ConfigError("graph: edge endpoint out of range");
        ++in_degree[c];
        children[p].push_back(c);
    }
    std::set<std::size_t> ready;
    for (std::size_t i = 0; i < n; ++i) {
        if (in_degree[i] == 0) ready.insert(i);
    }
    std::vector<std::size_t> order;
    order.reserve(n);
    while (!ready.empty()) {
        const std::size_t node = *ready.begin();
        ready.erase(ready.begin());
        order.push_back(node);
        for (std::size_t c : children[node]) {
            if (--in_degree[c] == 0) ready.insert(c);
        }
    }
    if (order.size() != n) throw ConfigError("graph: cycle detected");
    return order;
}

std::vector<double> apply_mechanism(Mechanism id,
                                    const std::vector<std::vector<double>>& parent_cols,
                                    const std::vector<double>& params) {
    if (parent_cols.empty()) throw ConfigError("mechanism: needs >= 1 parent");
    const std::size_t k = parent_cols.size();
    const std::size_t n = parent_cols[0].size();
    std::vector<double> out(n, 0.0);

    switch (id) {
        case Mechanism::linear: {
            if (params.size() < k) throw ConfigError("mechanism: linear weight count");
            for (std::size_t p = 0; p < k; ++p) {
                for (std::size_t r = 0; r < n; ++r) out[r] += params[p] * parent_cols[p][r];
            }
            return out;
        }
        case Mechanism::polynomial: {
            if (params.size() < k + 3) throw ConfigError("mechanism: polynomial params");
            const double c1 = params[k], c2 = params[k + 1], c3 = params[k + 2];
            for (std::size_t r = 0; r < n; ++r) {
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += params[p] * parent_cols[p][r];
                out[r] = c1 * s + c2 * s * s + c3 * s * s * s;
            }
            return out;
        }
        case Mechanism::product: {
            if (params.size() < k) throw ConfigError("mechanism: product shifts");
            for (std::size_t r = 0; r < n; ++r) {
                double prod = 1.0;
                for (std::size_t p = 0; p < k; ++p) prod *= parent_cols[p][r] + params[p];
                out[r] = prod;
            }
            return out;
        }
        case Mechanism::maximum:
        case Mechanism::minimum: {
            const bool is_max = id == Mechanism::maximum;
            for (std::size_t r = 0; r < n; ++r) {
                double best = parent_cols[0][r];
                for (std::size_t p = 1; p < k; ++p) {
                    best = is_max ? std::max(best, parent_cols[p][r])
                                  : std::min(best, parent_cols[p][r]);
                }
                out[r] = best;
            }
            return out;
        }
        case Mechanism::gated: {
            // params: threshold, then two weight vectors over the non-gate parents
            // (over the gate itself when it is the only parent).
            const std::size_t rest = (k > 1) ? k - 1 : 1;
            if (params.size() < 1 + 2 * rest) throw ConfigError("mechanism: gated params");
            const double threshold = params[0];
            for (std::size_t r = 0; r < n; ++r) {
                const bool high = parent_cols[0][r] > threshold;
                const std::size_t base = high ? 1 : 1 + rest;
                double s = 0.0;
                for (std::size_t p = 0; p < rest; ++p) {
                    const double v = (k > 1) ? parent_cols[p + 1][r] : parent_cols[0][r];
                    s += params[base + p] * v;
                }
                out[r] = s;
            }
            return out;
        }
        case Mechanism::distance: {
            if (params.size() < k) throw ConfigError("mechanism: distance anchor");
            for (std::size_t r = 0; r < n; ++r) {
                double d2 = 0.0;
                for (std::size_t p = 0; p < k; ++p) {
                    const double d = parent_cols[p][r] - params[p];
                    d2 += d * d;
                }
                out[r] = -std::sqrt(d2);
            }
            return out;
        }
    }
    throw ConfigError("mechanism: unknown id");
}

std::vector<double> apply_activation(Activation id, const std::vector<double>& x,
                                     const std::vector<double>& params) {
    std::vector<double> out(x.size());
    switch (id) {
        case Activation::identity:
            return x;
        case Activation::tanh_act:
            for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
            return out;
        case Activation::soft_clip:
            for (std::size_t i = 0; i < x.size(); ++i) {
                out[i] = x[i] > 30 ? x[i] : std::log1p(std::exp(std::min(x[i], 30.0)));
            }
            return out;
        case Activation::sinusoid: {
            if (params.size() < 2) throw ConfigError("activation: sinusoid needs omega, phi");
            for (std::size_t i = 0; i < x.size(); ++i) {
                out[i] = std::sin(params[0] * x[i] + params[1]);
            }
            return out;
        }
    }
    throw ConfigError("activation: unknown id");
}

DTensor evaluate_scm(const ScmGraph& graph, std::size_t n_rows, std::uint64_t seed,
                     const OodShift* ood) {
    const auto order = topological_order(graph);
    const auto parents = graph.parent_lists();
    DTensor values({n_rows, graph.n_nodes});

    for (std::size_t node : order) {
        const NodeSpec& spec = graph.node_specs[node];
        CounterRng rng(seed, kNoiseBase + node);
        std::vector<double> col(n_rows);
        for (std::size_t r = 0; r < n_rows; ++r) {
            col[r] = spec.noise.uniform ? rng.uniform(-spec.noise.scale, spec.noise.scale)
                                        : rng.normal(0.0, spec.noise.scale);
        }
        if (!parents[node].empty()) {
            std::vector<std::vector<double>> parent_cols;
            parent_cols.reserve(parents[node].size());
            for (std::size_t p : parents[node]) {
                std::vector<double> pc(n_rows);
                for (std::size_t r = 0; r < n_rows; ++r) pc[r] = values(r, p);
                parent_cols.push_back(std::move(pc));
            }
            const auto mech = apply_mechanism(spec.mechanism, parent_cols, spec.mech_params);
            const auto act = apply_activation(spec.activation, mech, spec.act_params);
            for (std::size_t r = 0; r < n_rows; ++r) col[r] += act[r];
        } else if (ood != nullptr && ood->node == node && ood->row_mask != nullptr) {
            for (std::size_t r = 0; r < n_rows; ++r) {
                if ((*ood->row_mask)[r] != 0) col[r] += ood->offset;
            }
        }
        for (std::size_t r = 0; r < n_rows; ++r) {
            if (!std::isfinite(col[r])) {
                throw RetryExhaustedError("scm: non-finite intermediate at node " +
                                          std::to_string(node));
            }
            values(r, node) = col[r];
        }
    }
    return values;
}

namespace {

// Rank-bin a column into n_classes bins with Dirichlet-jittered widths, then
// permute label ids. Retries the widths until every class appears in the
// train split.
std::vector<double> rank_bin_labels(const std::vector<double>& target,
                                    const std::vector<std::uint8_t>& split,
                                    std::uint32_t n_classes, std::uint64_t seed) {
    const std::size_t n = target.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return target[a] < target[b]; });

    CounterRng rng(seed, kBins);
    for (int attempt = 0; attempt < kMaxBinRetries; ++attempt) {
        // Last resort before erroring: uniform widths, which guarantee every
        // class at least floor(n / n_classes) members.
        const auto widths = attempt + 1 < kMaxBinRetries
                                ? rng.dirichlet(n_classes, 2.0)
                                : std::vector<double>(n_classes, 1.0 / n_classes);
        std::vector<double> labels(n, 0.0);
        std::vector<std::size_t> train_count(n_classes, 0), total_count(n_classes, 0);
        double cum = 0.0;
        std::size_t start = 0;
        for (std::uint32_t c = 0; c < n_classes; ++c) {
            cum += widths[c];
            std::size_t end = (c + 1 == n_classes)
                                  ? n
                                  : static_cast<std::size_t>(std::llround(cum * static_cast<double>(n)));
            end = std::min(end, n);
            if (end < start) end = start;
            for (std::size_t pos = start; pos < end; ++pos) {
                labels[idx[pos]] = static_cast<double>(c);
                ++total_count[c];
                if (split[idx[pos]] == 0) ++train_count[c];
            }
            start = end;
        }
        bool ok = true;
        for (std::uint32_t c = 0; c < n_classes; ++c) {
            if (train_count[c] == 0 || total_count[c] == 0) ok = false;
        }
        if (!ok) continue;

        std::vector<std::uint32_t> perm(n_classes);
        std::iota(perm.begin(), perm.end(), 0u);
        CounterRng perm_rng(seed, kLabelPerm);
        perm_rng.shuffle(std::span<std::uint32_t>(perm));
        for (double& l : labels) l = perm[static_cast<std::uint32_t>(l)];
        return labels;
    }
    throw RetryExhaustedError("prior: could not place every class in the train split");
}

}  // namespace

Dataset select_and_finalize(const DTensor& values, const PriorHyperparams& hp,
                            const std::vector<std::uint8_t>& split, const ScmGraph* graph) {
    const std::size_t n_rows = values.dim(0);
    const std::size_t n_nodes = values.dim(1);
    CounterRng rng(hp.seed, kSelect);

    // Target drawn uniformly among nodes with at least one parent (they carry
    // structure); features uniformly among the remaining nodes.
    std::vector<std::size_t> target_pool;
    if (graph != nullptr) {
        const auto parents = graph->parent_lists();
        for (std::size_t i = 0; i < n_nodes; ++i) {
            if (!parents[i].empty()) target_pool.push_back(i);
        }
    }
    if (target_pool.empty()) {
        target_pool.resize(n_nodes);
        std::iota(target_pool.begin(), target_pool.end(), std::size_t{0});
    }
    const std::size_t target_node = target_pool[rng.uniform_int(target_pool.size())];

    std::vector<std::size_t> nodes;
    for (std::size_t i = 0; i < n_nodes; ++i) {
        if (i != target_node) nodes.push_back(i);
    }
    rng.shuffle(std::span<std::size_t>(nodes));
    std::vector<std::size_t> feature_nodes(nodes.begin(),
                                           nodes.begin() + static_cast<std::ptrdiff_t>(hp.n_features));

    Dataset ds;
    ds.n_rows = n_rows;
    ds.n_features = hp.n_features;
    ds.task = hp.task;
    ds.n_classes = hp.task == Task::classification ? hp.n_classes : 0;
    ds.col_kinds.assign(hp.n_features, ColKind{});
    ds.x.assign(n_rows * hp.n_features, 0.0);
    ds.nan_mask.assign(n_rows * hp.n_features, 0);
    ds.split = split;

    for (std::size_t c = 0; c < hp.n_features; ++c) {
        for (std::size_t r = 0; r < n_rows; ++r) {
            ds.x[r * hp.n_features + c] = values(r, feature_nodes[c]);
        }
    }

    std::vector<double> target(n_rows);
    for (std::size_t r = 0; r < n_rows; ++r) target[r] = values(r, target_node);
    if (hp.task == Task::classification) {
        ds.y = rank_bin_labels(target, split, hp.n_classes, hp.seed);
    } else {
        ds.y = std::move(target);
    }

    // Quantile-bin a fraction of the feature columns into sampled cardinalities.
    if (hp.categorical_fraction > 0) {
        CounterRng cat_rng(hp.seed, kCategorical);
        const std::size_t n_cat = static_cast<std::size_t>(
            std::floor(hp.categorical_fraction * static_cast<double>(hp.n_features)));
        std::vector<std::size_t> cols(hp.n_features);
        std::iota(cols.begin(), cols.end(), std::size_t{0});
        cat_rng.shuffle(std::span<std::size_t>(cols));
        for (std::size_t i = 0; i < n_cat; ++i) {
            const std::size_t c = cols[i];
            const std::uint32_t card = 2 + static_cast<std::uint32_t>(cat_rng.uniform_int(7));
            std::vector<std::size_t> idx(n_rows);
            std::iota(idx.begin(), idx.end(), std::size_t{0});
            std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
                return ds.cell(a, c) < ds.cell(b, c);
            });
            for (std::size_t pos = 0; pos < n_rows; ++pos) {
                const auto bin = static_cast<double>(std::min<std::size_t>(
                    pos * card / n_rows, card - 1));
                ds.x[idx[pos] * hp.n_features + c] = bin;
            }
            ds.col_kinds[c] = ColKind{true, card};
        }
    }

    if (hp.missing_rate > 0) {
        CounterRng miss_rng(hp.seed, kMissing);
        for (std::size_t i = 0; i < ds.x.size(); ++i) {
            if (miss_rng.bernoulli(hp.missing_rate)) {
                ds.x[i] = std::numeric_limits<double>::quiet_NaN();
                ds.nan_mask[i] = 1;
            }
        }
    }

    ds.validate();
    return ds;
}

Dataset generate_dataset(const PriorHyperparams& hp) {
    hp.validate();
    std::vector<std::uint8_t> split(hp.n_rows, 0);
    std::size_t n_train = static_cast<std::size_t>(
        std::llround(hp.train_fraction * static_cast<double>(hp.n_rows)));
    n_train = std::clamp<std::size_t>(n_train, 1, hp.n_rows - 1);
    for (std::size_t r = n_train; r < hp.n_rows; ++r) split[r] = 1;

    std::string last_error;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        PriorHyperparams cur = hp;
        cur.seed = (attempt == 0) ? hp.seed : CounterRng(hp.seed, 0xA77E + attempt).next_u64();
        try {
            const ScmGraph graph = sample_dag(cur);
            OodShift shift;
            const OodShift* shift_ptr = nullptr;
            if (cur.ood_mode) {
                const auto parents = graph.parent_lists();
                std::vector<std::size_t> roots;
                for (std::size_t i = 0; i < graph.n_nodes; ++i) {
                    if (parents[i].empty()) roots.push_back(i);
                }
                if (!roots.empty()) {
                    CounterRng ood_rng(cur.seed, kOod);
                    shift.node = roots[ood_rng.uniform_int(roots.size())];
                    shift.offset = 3.0 * graph.node_specs[shift.node].noise.scale;
                    shift.row_mask = &split;
                    shift_ptr = &shift;
                }
            }
            const DTensor values = evaluate_scm(graph, cur.n_rows, cur.seed, shift_ptr);
            return select_and_finalize(values, cur, split, &graph);
        } catch (const RetryExhaustedError& e) {
            last_error = e.what();
        }
    }
    throw RetryExhaustedError("prior: generation failed after retries: " + last_error);
}

PriorHyperparams preset_hyperparams(const std::string& name) {
    PriorHyperparams hp;
    if (name == "micro-cls") {
        hp.task = Task::classification;
        hp.n_rows = 60;
        hp.n_features = 6;
        hp.n_nodes = 12;
        hp.n_classes = 3;
        hp.missing_rate = 0.05;
        hp.categorical_fraction = 0.2;
    } else if (name == "micro-reg") {
        hp.task = Task::regression;
        hp.n_rows = 60;
        hp.n_features = 6;
        hp.n_nodes = 12;
        hp.missing_rate = 0.05;
    } else if (name == "many-class") {
        hp.task = Task::classification;
        hp.n_rows = 1500;
        hp.n_features = 8;
        hp.n_nodes = 16;
        hp.n_classes = 100;
        hp.graph_algorithm = GraphAlgorithm::scale_free;
    } else if (name == "wide") {
        hp.task = Task::classification;
        hp.n_rows = 120;
        hp.n_features = 40;
        hp.n_nodes = 48;
        hp.n_classes = 4;
        hp.graph_algorithm = GraphAlgorithm::layered;
    } else if (name == "ood") {
        hp.task = Task::regression;
        hp.n_rows = 200;
        hp.n_features = 5;
        hp.n_nodes = 10;
        hp.ood_mode = true;
    } else {
        throw ConfigError("unknown preset: " + name);
    }
    return hp;
}

std::vector<std::string> preset_names() {
    return {"micro-cls", "micro-reg", "many-class", "wide", "ood"};
}

}  // namespace tfe::prior
