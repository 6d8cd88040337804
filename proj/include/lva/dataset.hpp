#pragma once

#include "lva/linalg.hpp"

#include <string>

namespace lva {

/// Indexed samples (x_i, y_i): inputs N x d_x, labels N x d_y.
struct PairedDataset {
    Matrix inputs;
    Matrix labels;
    std::string name;

    Eigen::Index size() const { return inputs.rows(); }
    Eigen::Index input_dim() const { return inputs.cols(); }
    Eigen::Index label_dim() const { return labels.cols(); }

    /// Throws unless rows agree, N >= 1 and all entries are finite.
    void validate() const;

    /// Rows [begin, begin + count).
    PairedDataset slice(Eigen::Index begin, Eigen::Index count) const;
};

/// CSV with header `x0,...,x{dx-1},y0,...,y{dy-1}`, one sample per line,
/// values printed with 17 significant digits.
std::string to_csv(const PairedDataset& data);
PairedDataset from_csv(const std::string& text, const std::string& name = "");

PairedDataset load_dataset(const std::string& path);
void save_dataset(const PairedDataset& data, const std::string& path);

}  // namespace lva
