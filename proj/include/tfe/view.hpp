#pragma once

#include <cstdint>
#include <vector>

#include "tfe/dataset.hpp"
#include "tfe/tensor.hpp"

namespace tfe::model {

// One estimator's preprocessed slice of a dataset, ready for the forward
// pass. Rows are ordered train block first, then test rows in original order.
// Missing cells hold 0 and are flagged in nan_mask.
template <class T>
struct DatasetViewT {
    TensorT<T> x;                             // [R, F]
    std::vector<std::uint8_t> nan_mask;       // [R * F]
    std::vector<std::uint8_t> train_flags;    // [R], 1 = train
    std::vector<std::int32_t> y_class;        // per-row class id (classification)
    std::vector<T> y_target;                  // per-row standardized target (regression)
    prior::Task task = prior::Task::classification;
    std::uint32_t n_classes = 0;
    double target_mean = 0.0;                 // regression target scaling
    double target_std = 1.0;
    std::vector<std::size_t> row_ids;         // original dataset row per view row

    std::size_t n_rows() const { return train_flags.size(); }
    std::size_t n_features() const { return x.rank() == 2 ? x.dim(1) : 0; }
    std::size_t n_train() const {
        std::size_t n = 0;
        for (std::uint8_t f : train_flags) n += (f != 0);
        return n;
    }
    std::size_t n_test() const { return n_rows() - n_train(); }
};

using DatasetView = DatasetViewT<float>;

// Exact widening for float64 oracle runs.
DatasetViewT<double> widen(const DatasetView& view);

// Row subsets preserving transform state. keep_train selects the train block,
// otherwise the test block.
template <class T>
DatasetViewT<T> subset_rows(const DatasetViewT<T>& view, bool keep_train);

}  // namespace tfe::model
