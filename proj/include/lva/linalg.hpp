#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace lva {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Result of a (ridge-regularized) least-squares solve.
struct LstsqSolution {
    Matrix coefficients;        // cols(design) x cols(targets)
    double residual_norm = 0;   // ||design * C - targets||_F
    std::size_t rank = 0;       // numerical rank of the design matrix
    double condition_estimate = 0;
    bool rank_deficient = false;   // rank < cols with ridge == 0; minimum-norm solution returned
    bool ill_conditioned = false;  // condition_estimate > kIllConditioned
};

inline constexpr double kIllConditioned = 1e8;

namespace linalg {

/// Throws DataError if any entry is NaN/Inf.
void require_finite(const Matrix& m, const char* what);
void require_finite(const Vector& v, const char* what);

Matrix matmul(const Matrix& a, const Matrix& b);

/// argmin_C ||design C - targets||_F^2 + ridge ||C||_F^2.
///
/// ridge == 0 uses a complete orthogonal decomposition, which returns the
/// minimum-norm solution for rank-deficient designs. ridge > 0 solves the
/// regularized problem exactly through a Cholesky factorization of whichever
/// Gram matrix (primal or dual) is smaller; both are positive definite then.
LstsqSolution least_squares(const Matrix& design, const Matrix& targets, double ridge = 0.0);

/// Largest singular value by power iteration on a^T a.
double spectral_norm(const Matrix& a, double tol = 1e-10, int max_iter = 1000);

}  // namespace linalg
}  // namespace lva
