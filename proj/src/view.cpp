#include "tfe/view.hpp"

namespace tfe::model {

DatasetViewT<double> widen(const DatasetView& view) {
    DatasetViewT<double> out;
    out.x = DTensor(view.x.shape());
    for (std::size_t i = 0; i < view.x.numel(); ++i) out.x(i) = view.x(i);
    out.nan_mask = view.nan_mask;
    out.train_flags = view.train_flags;
    out.y_class = view.y_class;
    out.y_target.assign(view.y_target.begin(), view.y_target.end());
    out.task = view.task;
    out.n_classes = view.n_classes;
    out.target_mean = view.target_mean;
    out.target_std = view.target_std;
    out.row_ids = view.row_ids;
    return out;
}

template <class T>
DatasetViewT<T> subset_rows(const DatasetViewT<T>& view, bool keep_train) {
    DatasetViewT<T> out;
    out.task = view.task;
    out.n_classes = view.n_classes;
    out.target_mean = view.target_mean;
    out.target_std = view.target_std;

    const std::size_t f = view.n_features();
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < view.n_rows(); ++r) {
        if ((view.train_flags[r] != 0) == keep_train) rows.push_back(r);
    }
    out.x = TensorT<T>({rows.size(), f});
    out.nan_mask.resize(rows.size() * f);
    out.train_flags.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t src = rows[i];
        for (std::size_t c = 0; c < f; ++c) {
            out.x(i, c) = view.x(src, c);
            out.nan_mask[i * f + c] = view.nan_mask[src * f + c];
        }
        out.train_flags[i] = view.train_flags[src];
        out.row_ids.push_back(view.row_ids.empty() ? src : view.row_ids[src]);
        if (!view.y_class.empty()) out.y_class.push_back(view.y_class[src]);
        if (!view.y_target.empty()) out.y_target.push_back(view.y_target[src]);
    }
    return out;
}

template DatasetViewT<float> subset_rows<float>(const DatasetViewT<float>&, bool);
template DatasetViewT<double> subset_rows<double>(const DatasetViewT<double>&, bool);

}  // namespace tfe::model
