#pragma once

#include "lva/dataset.hpp"
#include "lva/net.hpp"
#include "lva/rng.hpp"

#include <vector>

namespace lva::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, CounterRng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    return m;
}

inline Vector random_vector(Eigen::Index n, CounterRng& rng, double scale = 1.0) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
    return v;
}

inline PairedDataset random_dataset(Eigen::Index n, Eigen::Index dx, Eigen::Index dy, CounterRng& rng) {
    return {random_matrix(n, dx, rng), random_matrix(n, dy, rng), "random"};
}

/// Source plus a small perturbation of it: the usual small-shift transfer setting.
inline PairedDataset perturbed(const PairedDataset& d, CounterRng& rng, double sx, double sy) {
    PairedDataset t = d;
    t.inputs += random_matrix(d.size(), d.input_dim(), rng, sx);
    t.labels += random_matrix(d.size(), d.label_dim(), rng, sy);
    t.name = "perturbed";
    return t;
}

inline Mlp small_net(std::vector<Eigen::Index> dims, std::uint64_t seed, Activation hidden = Activation::relu()) {
    return make_mlp(dims, hidden, Activation::identity(), seed);
}

inline double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace lva::testing
