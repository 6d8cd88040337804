#include "lva/align.hpp"
#include "lva/errors.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace lva;
using lva::testing::random_dataset;
using lva::testing::random_matrix;

namespace {

double joint(const PairedDataset& t, Eigen::Index i, const PairedDataset& s, Eigen::Index j) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < t.input_dim(); ++c) acc += std::pow(t.inputs(i, c) - s.inputs(j, c), 2);
    for (Eigen::Index c = 0; c < t.label_dim(); ++c) acc += std::pow(t.labels(i, c) - s.labels(j, c), 2);
    return std::sqrt(acc);
}

PairedDataset points(std::initializer_list<std::pair<double, double>> xy) {
    PairedDataset d{Matrix(static_cast<Eigen::Index>(xy.size()), 1), Matrix(static_cast<Eigen::Index>(xy.size()), 1), ""};
    Eigen::Index i = 0;
    for (const auto& [x, y] : xy) {
        d.inputs(i, 0) = x;
        d.labels(i, 0) = y;
        ++i;
    }
    return d;
}

}  // namespace

TEST_CASE("align_nearest: identical datasets and hand geometry") {
    CounterRng rng(61);
    const PairedDataset d = random_dataset(12, 2, 1, rng);
    const Alignment a = align_nearest(d, d);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.source_index[i] == i);
    CHECK(a.epsilon_data == 0.0);

    const Alignment h = align_nearest(points({{0, 0}, {10, 0}}), points({{1, 0}}));
    CHECK(h.source_index[0] == 0);
    CHECK(h.pair_distances[0] == 1.0);
    CHECK(h.delta_x(0, 0) == 1.0);
    CHECK(h.delta_y(0, 0) == 0.0);
}

TEST_CASE("align_nearest: ties go to the smallest index") {
    const Alignment a = align_nearest(points({{-1, 0}, {1, 0}, {-1, 0}}), points({{0, 0}}));
    CHECK(a.source_index[0] == 0);
}

TEST_CASE("align_nearest: brute-force oracle, optimality and data deviation") {
    CounterRng rng(62);
    const PairedDataset s = random_dataset(50, 3, 2, rng);
    const PairedDataset t = random_dataset(30, 3, 2, rng);
    const Alignment a = align_nearest(s, t);
    double eps = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        std::size_t best = 0;
        double best_d = INFINITY;
        for (Eigen::Index j = 0; j < s.size(); ++j) {
            const double dist = joint(t, i, s, j);
            if (dist < best_d) {
                best_d = dist;
                best = static_cast<std::size_t>(j);
            }
            CHECK(a.pair_distances[static_cast<std::size_t>(i)] <= dist + 1e-12);
        }
        CHECK(a.source_index[static_cast<std::size_t>(i)] == best);
        CHECK(std::abs(a.pair_distances[static_cast<std::size_t>(i)] - best_d) <= 1e-14);
        eps = std::max(eps, best_d);
    }
    CHECK(std::abs(data_deviation(a) - eps) <= 1e-14);
    CHECK(data_deviation(a) == a.epsilon_data);
}

TEST_CASE("data_deviation: single pair") {
    const Alignment a = align_nearest(points({{0, 0}}), points({{1.5, 2.0}}));
    CHECK(data_deviation(a) == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("epsilon_data is zero exactly when every target sample has a coinciding source sample") {
    const PairedDataset s = points({{0, 0}, {1, 2}, {3, -1}});
    CHECK(align_nearest(s, points({{1, 2}, {0, 0}, {1, 2}})).epsilon_data == 0.0);
    CHECK(align_nearest(s, points({{1, 2}, {0, 1e-9}})).epsilon_data > 0.0);
}

TEST_CASE("align_nearest: permutation equivariance") {
    CounterRng rng(63);
    const PairedDataset s = random_dataset(40, 2, 1, rng);
    const PairedDataset t = random_dataset(25, 2, 1, rng);
    std::vector<std::size_t> perm(40);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    PairedDataset p = s;
    for (std::size_t k = 0; k < perm.size(); ++k) {
        p.inputs.row(static_cast<Eigen::Index>(k)) = s.inputs.row(static_cast<Eigen::Index>(perm[k]));
        p.labels.row(static_cast<Eigen::Index>(k)) = s.labels.row(static_cast<Eigen::Index>(perm[k]));
    }
    const Alignment a = align_nearest(s, t), b = align_nearest(p, t);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(perm[b.source_index[i]] == a.source_index[i]);
        CHECK(b.pair_distances[i] == a.pair_distances[i]);
    }
    CHECK(a.epsilon_data == b.epsilon_data);
}

TEST_CASE("label weight scales the label part of the metric") {
    const JointMetric m{2.0};
    Vector x1(1), y1(1), x2(1), y2(1);
    x1 << 0;
    y1 << 0;
    x2 << 3;
    y2 << 2;
    CHECK(m.distance(x1, y1, x2, y2) == doctest::Approx(5.0));
}

TEST_CASE("alignment: dimension mismatch") {
    CounterRng rng(64);
    CHECK_THROWS_AS(align_nearest(random_dataset(5, 2, 1, rng), random_dataset(5, 3, 1, rng)), ShapeError);
    CHECK_THROWS_AS(alignment_from_indices(random_dataset(5, 2, 1, rng), random_dataset(2, 2, 1, rng), {0, 7}),
                    ArgumentError);
}

TEST_CASE("sinkhorn: identity matching on identical data") {
    CounterRng rng(65);
    const PairedDataset d = random_dataset(30, 2, 1, rng);
    const Alignment a = align_sinkhorn(d, d, 1e-3);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.source_index[i] == i);
    CHECK(a.epsilon_data == 0.0);
}

TEST_CASE("sinkhorn: marginals after convergence") {
    CounterRng rng(66);
    const PairedDataset s = random_dataset(20, 2, 1, rng);
    const PairedDataset t = random_dataset(15, 2, 1, rng);
    const double tol = 1e-9;
    const SinkhornResult r = sinkhorn_coupling(s, t, 0.5, 5000, tol);
    REQUIRE(r.converged);
    for (Eigen::Index i = 0; i < 15; ++i) CHECK(std::abs(r.coupling.row(i).sum() - 1.0 / 15) <= tol);
    for (Eigen::Index j = 0; j < 20; ++j) CHECK(std::abs(r.coupling.col(j).sum() - 1.0 / 20) <= tol);
}

TEST_CASE("sinkhorn: entropy-dominated limit is uniform") {
    CounterRng rng(67);
    const PairedDataset s = random_dataset(10, 2, 1, rng);
    const PairedDataset t = random_dataset(8, 2, 1, rng);
    const SinkhornResult r = sinkhorn_coupling(s, t, 1e6, 500, 1e-12);
    CHECK((r.coupling.array() - 1.0 / 80).abs().maxCoeff() < 1e-3 / 80);
}

TEST_CASE("sinkhorn: well-separated clusters match within cluster") {
    CounterRng rng(68);
    auto cluster = [&](double cx, int n) {
        PairedDataset d{random_matrix(n, 2, rng, 0.1), random_matrix(n, 1, rng, 0.1), ""};
        d.inputs.col(0).array() += cx;
        return d;
    };
    auto stack = [](const PairedDataset& a, const PairedDataset& b) {
        PairedDataset d{Matrix(a.size() + b.size(), a.input_dim()), Matrix(a.size() + b.size(), a.label_dim()), ""};
        d.inputs << a.inputs, b.inputs;
        d.labels << a.labels, b.labels;
        return d;
    };
    const PairedDataset s = stack(cluster(0.0, 10), cluster(10.0, 10));
    const PairedDataset t = stack(cluster(0.0, 10), cluster(10.0, 10));
    const Alignment ot = align_sinkhorn(s, t, 0.05);
    const Alignment nn = align_nearest(s, t);
    for (std::size_t i = 0; i < ot.size(); ++i) {
        CHECK((ot.source_index[i] < 10) == (i < 10));
        CHECK((nn.source_index[i] < 10) == (i < 10));
    }
}

TEST_CASE("sinkhorn: errors and non-convergence flag") {
    CounterRng rng(69);
    const PairedDataset s = random_dataset(10, 2, 1, rng);
    CHECK_THROWS_AS(align_sinkhorn(s, s, 0.0), ArgumentError);
    CHECK_THROWS_AS(align_sinkhorn(s, s, -1.0), ArgumentError);
    const PairedDataset t = random_dataset(12, 2, 1, rng);
    const Alignment a = align_sinkhorn(s, t, 1e-4, 1, 1e-15);
    CHECK_FALSE(a.converged);
    CHECK(a.iterations == 1);
    CHECK(a.size() == 12);
}
