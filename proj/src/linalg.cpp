#include "lva/linalg.hpp"

#include "lva/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace lva::linalg {

void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw DataError(std::string(what) + ": non-finite entry");
}

void require_finite(const Vector& v, const char* what) {
    if (!v.allFinite()) throw DataError(std::string(what) + ": non-finite entry");
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    return a * b;
}

LstsqSolution least_squares(const Matrix& design, const Matrix& targets, double ridge) {
    if (design.rows() != targets.rows()) {
        throw ShapeError("least_squares: design has " + std::to_string(design.rows()) + " rows, targets " +
                         std::to_string(targets.rows()));
    }
    if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw ArgumentError("least_squares: ridge must be >= 0");
    require_finite(design, "least_squares design");
    require_finite(targets, "least_squares targets");

    const Eigen::Index n = design.cols();
    LstsqSolution out;

    // Rank and conditioning always come from the pivoted QR of the design.
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(design);
    cod.setThreshold(std::max<double>(design.rows(), n) * Eigen::NumTraits<double>::epsilon());
    out.rank = static_cast<std::size_t>(cod.rank());
    if (static_cast<Eigen::Index>(out.rank) < n) {
        out.condition_estimate = std::numeric_limits<double>::infinity();
    } else if (n > 0) {
        // |diag| of the triangular factor: singular-value proxies of the design.
        const Eigen::VectorXd d = cod.matrixQTZ().diagonal().head(n).cwiseAbs();
        out.condition_estimate = d.maxCoeff() / d.minCoeff();
    }
    out.ill_conditioned = out.condition_estimate > kIllConditioned;

    if (ridge == 0.0) {
        out.coefficients = cod.solve(Eigen::MatrixXd(targets));
        out.rank_deficient = static_cast<Eigen::Index>(out.rank) < n;
    } else if (design.rows() >= n) {
        Eigen::MatrixXd gram = design.transpose() * design;
        gram.diagonal().array() += ridge;
        out.coefficients = Eigen::LLT<Eigen::MatrixXd>(gram).solve(Eigen::MatrixXd(design.transpose() * targets));
    } else {
        // Dual form: C = A^T (A A^T + ridge I)^{-1} T.
        Eigen::MatrixXd gram = design * design.transpose();
        gram.diagonal().array() += ridge;
        const Eigen::MatrixXd alpha = Eigen::LLT<Eigen::MatrixXd>(gram).solve(Eigen::MatrixXd(targets));
        out.coefficients = design.transpose() * alpha;
    }
    out.residual_norm = (design * out.coefficients - targets).norm();
    require_finite(out.coefficients, "least_squares solution");
    return out;
}

double spectral_norm(const Matrix& a, double tol, int max_iter) {
    if (a.size() == 0) throw ArgumentError("spectral_norm: empty matrix");
    if (!(tol > 0.0)) throw ArgumentError("spectral_norm: tol must be > 0");
    require_finite(a, "spectral_norm");
    if (a.isZero(0.0)) return 0.0;

    // Deterministic start vector with no zero components.
    Vector v(a.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 1.0 + 0.1 * std::sin(static_cast<double>(i + 1));
    v.normalize();

    double sigma_sq = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        Vector w = a.transpose() * (a * v);
        const double next = v.dot(w);
        const double norm = w.norm();
        if (norm == 0.0) {
            // Start vector landed in the null space; perturb deterministically.
            v = Vector::Ones(a.cols()).normalized();
            w = a.transpose() * (a * v);
            if (w.norm() == 0.0) return 0.0;
            v = w.normalized();
            continue;
        }
        v = w / norm;
        if (std::abs(next - sigma_sq) <= tol * std::abs(next)) {
            sigma_sq = next;
            break;
        }
        sigma_sq = next;
    }
    // Rayleigh quotient at the final iterate.
    sigma_sq = std::max(sigma_sq, (a * v).squaredNorm());
    return std::sqrt(sigma_sq);
}

}  // namespace lva::linalg
