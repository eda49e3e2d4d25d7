#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "tfe/dataset.hpp"
#include "tfe/tensor.hpp"

namespace tfe::prior {

enum class GraphAlgorithm : std::uint8_t { scale_free = 0, layered = 1, random_dag = 2 };
enum class NoiseFamily : std::uint8_t { gaussian = 0, uniform = 1, mixed = 2 };

struct PriorHyperparams {
    std::size_t n_rows = 60;
    std::size_t n_features = 6;
    std::size_t n_nodes = 12;
    GraphAlgorithm graph_algorithm = GraphAlgorithm::random_dag;
    Task task = Task::classification;
    std::uint32_t n_classes = 3;  // ignored for regression
    NoiseFamily noise_family = NoiseFamily::gaussian;
    bool ood_mode = false;
    double missing_rate = 0.0;
    double categorical_fraction = 0.0;
    double train_fraction = 0.75;
    std::uint64_t seed = 0;
    // Sampling knobs: fixed values override the seeded draw.
    std::optional<double> edge_prob;       // random_dag edge probability
    std::optional<std::size_t> n_layers;   // layered layer count

    void validate() const;
};

enum class Mechanism : std::uint8_t {
    linear = 0,       // weighted sum of parents
    polynomial = 1,   // degree <= 3 polynomial of the weighted sum
    product = 2,      // product of shifted parents
    maximum = 3,
    minimum = 4,
    gated = 5,        // first parent switches between two linear forms
    distance = 6,     // negative Euclidean distance to a random anchor
};

enum class Activation : std::uint8_t {
    identity = 0,
    tanh_act = 1,
    soft_clip = 2,    // softplus, a smooth relu
    sinusoid = 3,     // sin(omega * x + phi)
};

struct NoiseSpec {
    bool uniform = false;  // false: N(0, scale^2); true: U(-scale, scale)
    double scale = 1.0;
};

struct NodeSpec {
    NoiseSpec noise;
    Mechanism mechanism = Mechanism::linear;   // unused for root nodes
    Activation activation = Activation::identity;
    std::vector<double> mech_params;
    std::vector<double> act_params;
};

struct ScmGraph {
    std::size_t n_nodes = 0;
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // (parent, child)
    std::vector<NodeSpec> node_specs;
    std::vector<std::size_t> layers;  // layer index per node; empty unless layered

    std::vector<std::vector<std::size_t>> parent_lists() const;
};

ScmGraph sample_dag(const PriorHyperparams& hp);

// Parent-before-child ordering, ties broken by ascending node index.
// Throws ConfigError on a cycle.
std::vector<std::size_t> topological_order(const ScmGraph& graph);

// parent_cols: one column of n_rows values per parent.
std::vector<double> apply_mechanism(Mechanism id,
                                    const std::vector<std::vector<double>>& parent_cols,
                                    const std::vector<double>& params);

std::vector<double> apply_activation(Activation id, const std::vector<double>& x,
                                     const std::vector<double>& params);

// Location shift added to one root node's noise on masked rows (the
// out-of-distribution test-row shift).
struct OodShift {
    std::size_t node = 0;
    double offset = 0.0;
    const std::vector<std::uint8_t>* row_mask = nullptr;  // 1 = shifted row
};

// Node value matrix [n_rows, n_nodes]; deterministic in (graph, seed).
// Throws RetryExhaustedError if a non-finite intermediate appears.
DTensor evaluate_scm(const ScmGraph& graph, std::size_t n_rows, std::uint64_t seed,
                     const OodShift* ood = nullptr);

Dataset select_and_finalize(const DTensor& values, const PriorHyperparams& hp,
                            const std::vector<std::uint8_t>& split,
                            const ScmGraph* graph = nullptr);

// Full pipeline: split, DAG, evaluation (with bounded non-finite retries),
// feature/target selection and post-processing.
Dataset generate_dataset(const PriorHyperparams& hp);

// Named hyperparameter presets for the CLI ("micro-cls", "micro-reg",
// "many-class", "wide", "ood").
PriorHyperparams preset_hyperparams(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace tfe::prior
