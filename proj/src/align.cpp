#include "lva/align.hpp"

#include "lva/errors.hpp"

#include <cmath>
#include <limits>

namespace lva {

namespace {

void check_compatible(const PairedDataset& source, const PairedDataset& target) {
    source.validate();
    target.validate();
    if (source.input_dim() != target.input_dim() || source.label_dim() != target.label_dim()) {
        throw ShapeError("alignment: source is (" + std::to_string(source.input_dim()) + ", " +
                         std::to_string(source.label_dim()) + ") but target is (" + std::to_string(target.input_dim()) +
                         ", " + std::to_string(target.label_dim()) + ")");
    }
}

double log_sum_exp(const Eigen::Ref<const Vector>& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

double JointMetric::distance(const Eigen::Ref<const Vector>& x1, const Eigen::Ref<const Vector>& y1,
                             const Eigen::Ref<const Vector>& x2, const Eigen::Ref<const Vector>& y2) const {
    return std::sqrt((x1 - x2).squaredNorm() + label_weight * label_weight * (y1 - y2).squaredNorm());
}

Matrix joint_sq_distances(const PairedDataset& source, const PairedDataset& target, const JointMetric& metric) {
    check_compatible(source, target);
    const double w2 = metric.label_weight * metric.label_weight;
    Matrix d(target.size(), source.size());
    for (Eigen::Index i = 0; i < target.size(); ++i) {
        for (Eigen::Index j = 0; j < source.size(); ++j) {
            d(i, j) = (target.inputs.row(i) - source.inputs.row(j)).squaredNorm() +
                      w2 * (target.labels.row(i) - source.labels.row(j)).squaredNorm();
        }
    }
    return d;
}

Alignment alignment_from_indices(const PairedDataset& source, const PairedDataset& target,
                                 std::vector<std::size_t> source_index, const JointMetric& metric) {
    check_compatible(source, target);
    if (static_cast<Eigen::Index>(source_index.size()) != target.size()) {
        throw ShapeError("alignment: need one source index per target sample");
    }
    Alignment a;
    a.delta_x.resize(target.size(), target.input_dim());
    a.delta_y.resize(target.size(), target.label_dim());
    a.pair_distances.reserve(source_index.size());
    for (Eigen::Index i = 0; i < target.size(); ++i) {
        const std::size_t j = source_index[static_cast<std::size_t>(i)];
        if (static_cast<Eigen::Index>(j) >= source.size()) throw ArgumentError("alignment: source index out of range");
        const auto sj = static_cast<Eigen::Index>(j);
        a.delta_x.row(i) = target.inputs.row(i) - source.inputs.row(sj);
        a.delta_y.row(i) = target.labels.row(i) - source.labels.row(sj);
        a.pair_distances.push_back(metric.distance(target.inputs.row(i).transpose(), target.labels.row(i).transpose(),
                                                   source.inputs.row(sj).transpose(), source.labels.row(sj).transpose()));
    }
    a.source_index = std::move(source_index);
    a.epsilon_data = data_deviation(a);
    return a;
}

Alignment align_nearest(const PairedDataset& source, const PairedDataset& target, const JointMetric& metric) {
    check_compatible(source, target);
    const double w2 = metric.label_weight * metric.label_weight;
    std::vector<std::size_t> index(static_cast<std::size_t>(target.size()));
    for (Eigen::Index i = 0; i < target.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_j = 0;
        for (Eigen::Index j = 0; j < source.size(); ++j) {
            const double d = (target.inputs.row(i) - source.inputs.row(j)).squaredNorm() +
                             w2 * (target.labels.row(i) - source.labels.row(j)).squaredNorm();
            if (d < best) {  // strict: first minimum wins
                best = d;
                best_j = static_cast<std::size_t>(j);
            }
        }
        index[static_cast<std::size_t>(i)] = best_j;
    }
    return alignment_from_indices(source, target, std::move(index), metric);
}

double data_deviation(const Alignment& alignment) {
    double eps = 0.0;
    for (double d : alignment.pair_distances) eps = std::max(eps, d);
    return eps;
}

SinkhornResult sinkhorn_coupling(const PairedDataset& source, const PairedDataset& target, double reg, int max_iter,
                                 double tol, const JointMetric& metric) {
    if (!(reg > 0.0) || !std::isfinite(reg)) throw ArgumentError("sinkhorn: reg must be > 0");
    if (max_iter < 1) throw ArgumentError("sinkhorn: max_iter must be >= 1");
    const Matrix cost = joint_sq_distances(source, target, metric);
    const Eigen::Index nt = cost.rows(), ns = cost.cols();
    const double log_a = -std::log(static_cast<double>(nt));
    const double log_b = -std::log(static_cast<double>(ns));

    // Potentials f (targets) and g (sources); coupling = exp((f_i + g_j - C_ij) / reg).
    Vector f = Vector::Zero(nt), g = Vector::Zero(ns);
    Vector scratch_s(ns), scratch_t(nt);
    SinkhornResult out;
    for (int it = 1; it <= max_iter; ++it) {
        for (Eigen::Index i = 0; i < nt; ++i) {
            scratch_s = (g - cost.row(i).transpose()) / reg;
            f[i] = reg * (log_a - log_sum_exp(scratch_s));
        }
        for (Eigen::Index j = 0; j < ns; ++j) {
            scratch_t = (f - cost.col(j)) / reg;
            g[j] = reg * (log_b - log_sum_exp(scratch_t));
        }
        // Columns are exact after the g-update; check the row marginals.
        double err = 0.0;
        for (Eigen::Index i = 0; i < nt; ++i) {
            scratch_s = (g - cost.row(i).transpose()).array() / reg + f[i] / reg;
            err = std::max(err, std::abs(std::exp(log_sum_exp(scratch_s)) - std::exp(log_a)));
        }
        out.iterations = it;
        out.marginal_error = err;
        if (err <= tol) {
            out.converged = true;
            break;
        }
    }
    out.coupling.resize(nt, ns);
    for (Eigen::Index i = 0; i < nt; ++i)
        for (Eigen::Index j = 0; j < ns; ++j) out.coupling(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / reg);
    return out;
}

Alignment align_sinkhorn(const PairedDataset& source, const PairedDataset& target, double reg, int max_iter, double tol,
                         const JointMetric& metric) {
    const SinkhornResult ot = sinkhorn_coupling(source, target, reg, max_iter, tol, metric);
    std::vector<std::size_t> index(static_cast<std::size_t>(ot.coupling.rows()));
    for (Eigen::Index i = 0; i < ot.coupling.rows(); ++i) {
        Eigen::Index best = 0;
        ot.coupling.row(i).maxCoeff(&best);  // first maximum on ties
        index[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
    }
    Alignment a = alignment_from_indices(source, target, std::move(index), metric);
    a.converged = ot.converged;
    a.iterations = ot.iterations;
    return a;
}

}  // namespace lva
