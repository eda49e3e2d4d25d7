#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tfe/error.hpp"

namespace tfe::prior {

enum class Task : std::uint8_t { classification = 0, regression = 1 };

struct ColKind {
    bool categorical = false;
    std::uint32_t cardinality = 0;  // 0 for numeric columns
};

// Columnar supervised table. Missing feature cells hold an IEEE quiet NaN and
// are flagged in nan_mask; the target is never missing.
struct Dataset {
    std::size_t n_rows = 0;
    std::size_t n_features = 0;
    Task task = Task::classification;
    std::uint32_t n_classes = 0;  // 0 for regression
    std::vector<ColKind> col_kinds;
    std::vector<double> x;             // row-major [n_rows, n_features]
    std::vector<std::uint8_t> nan_mask;
    std::vector<double> y;             // class index or real value
    std::vector<std::uint8_t> split;   // 0 = train, 1 = test

    double cell(std::size_t r, std::size_t c) const { return x[r * n_features + c]; }
    bool missing(std::size_t r, std::size_t c) const { return nan_mask[r * n_features + c] != 0; }
    std::size_t n_train() const;
    std::size_t n_test() const;

    void validate() const;  // throws IoError/ConfigError on a broken invariant
};

// Binary columnar format, magic "TFD1", little-endian. Header: n_rows,
// n_features, task kind (+ class count), per-column kind records; then
// per-column contiguous float64 feature data (NaN encodes missing), the
// target column, and the split byte-vector.
void save_tfd(const Dataset& ds, const std::string& path);
Dataset load_tfd(const std::string& path);

// CSV with a header row; missing cells are written as the literal "NaN".
void export_csv(const Dataset& ds, const std::string& path);

// FNV-1a over the serialized TFD1 bytes.
std::uint64_t dataset_checksum(const Dataset& ds);

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace tfe::prior
