#pragma once

#include "lva/dataset.hpp"

#include <cstddef>
#include <vector>

namespace lva {

/// Euclidean norm on the concatenation (x, label_weight * y).
struct JointMetric {
    double label_weight = 1.0;

    double distance(const Eigen::Ref<const Vector>& x1, const Eigen::Ref<const Vector>& y1,
                    const Eigen::Ref<const Vector>& x2, const Eigen::Ref<const Vector>& y2) const;
};

/// Pairing of every target sample i with a source sample j_i.
/// delta_x / delta_y hold target minus aligned source, so downstream code never re-indexes.
struct Alignment {
    std::vector<std::size_t> source_index;
    std::vector<double> pair_distances;
    double epsilon_data = 0.0;
    Matrix delta_x;
    Matrix delta_y;
    bool converged = true;  // Sinkhorn only
    int iterations = 0;     // Sinkhorn only

    std::size_t size() const { return source_index.size(); }
};

/// Squared joint distances, target rows x source columns.
Matrix joint_sq_distances(const PairedDataset& source, const PairedDataset& target, const JointMetric& metric);

/// Nearest source sample per target sample; ties go to the smallest source index.
Alignment align_nearest(const PairedDataset& source, const PairedDataset& target, const JointMetric& metric = {});

/// Builds an Alignment from an explicit pairing.
Alignment alignment_from_indices(const PairedDataset& source, const PairedDataset& target,
                                 std::vector<std::size_t> source_index, const JointMetric& metric = {});

/// Max over aligned pairs of the joint distance.
double data_deviation(const Alignment& alignment);

struct SinkhornResult {
    Matrix coupling;  // target x source, marginals 1/N_target (rows) and 1/N_source (cols)
    bool converged = false;
    int iterations = 0;
    double marginal_error = 0.0;
};

/// Log-domain entropic OT between uniform marginals with squared joint distance as cost.
SinkhornResult sinkhorn_coupling(const PairedDataset& source, const PairedDataset& target, double reg, int max_iter,
                                 double tol, const JointMetric& metric = {});

/// Entropic OT coupling hardened to source_index[i] = argmax_j coupling(i, j).
Alignment align_sinkhorn(const PairedDataset& source, const PairedDataset& target, double reg, int max_iter = 500,
                         double tol = 1e-9, const JointMetric& metric = {});

}  // namespace lva
