#pragma once

// Dense kernels shared by every other module: minimum-norm least squares,
// Moore-Penrose pseudoinverse, orthogonal projectors.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include "avrc/errors.hpp"

namespace avrc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Result of a minimum-norm least-squares solve.
struct LeastSquaresFit {
  Vector coefficients;
  std::size_t rank = 0;
  double residual_sum_squares = 0.0;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

/// max(1, largest absolute entry); the reference scale for tolerances.
template <typename Derived>
double problem_scale(const Eigen::MatrixBase<Derived>& x) {
  if (x.size() == 0) return 1.0;
  return std::max(1.0, x.cwiseAbs().maxCoeff());
}

/// Default SVD cutoff: eps * max(rows, cols), relative to the largest
/// singular value.
inline double default_rel_tol(Eigen::Index rows, Eigen::Index cols) {
  return std::numeric_limits<double>::epsilon() *
         static_cast<double>(std::max(rows, cols));
}

/// Pivoted-QR diagonal ratio, in units of rel_tol, above which a design is
/// treated as full column rank without computing its SVD.
inline constexpr double kFullRankMargin = 1e6;

namespace detail {

inline void check_finite(const Matrix& m, const char* what) {
  if (!all_finite(m)) throw InvalidData(std::string(what) + " contains NaN or Inf");
}

// Thin SVD factors of an arbitrary matrix. Tall inputs are reduced with a
// Householder QR first, so the SVD only ever runs on a square triangle.
struct ThinSvd {
  Matrix u;       // rows x r0
  Vector sigma;   // r0, descending
  Matrix v;       // cols x r0
};

inline ThinSvd thin_svd(const Matrix& a) {
  ThinSvd out;
  const Eigen::Index rows = a.rows();
  const Eigen::Index cols = a.cols();
  if (rows > 2 * cols) {
    Eigen::HouseholderQR<Matrix> qr(a);
    Matrix r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
    Eigen::BDCSVD<Matrix> svd(r, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
    out.u = q * svd.matrixU();
    out.sigma = svd.singularValues();
    out.v = svd.matrixV();
  } else {
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.u = svd.matrixU();
    out.sigma = svd.singularValues();
    out.v = svd.matrixV();
  }
  return out;
}

inline std::size_t rank_under_cutoff(const Vector& sigma, double rel_tol) {
  if (sigma.size() == 0) return 0;
  const double cutoff = rel_tol * sigma(0);
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (sigma(i) > cutoff) ++r;
  }
  return r;
}

}  // namespace detail

/// Numerical rank under the SVD cutoff rel_tol * sigma_max.
inline std::size_t numerical_rank(const Matrix& m, double rel_tol = -1.0) {
  detail::check_finite(m, "matrix");
  if (rel_tol <= 0.0) rel_tol = default_rel_tol(m.rows(), m.cols());
  Eigen::BDCSVD<Matrix> svd(m);
  return detail::rank_under_cutoff(svd.singularValues(), rel_tol);
}

/**
 * Moore-Penrose pseudoinverse via SVD. Singular values at or below
 * rel_tol * sigma_max are treated as zero.
 */
inline Matrix pseudo_inverse(const Matrix& m, double rel_tol = -1.0) {
  require(m.rows() >= 1 && m.cols() >= 1, "pseudo_inverse: empty matrix");
  detail::check_finite(m, "matrix");
  if (rel_tol <= 0.0) rel_tol = default_rel_tol(m.rows(), m.cols());
  const auto svd = detail::thin_svd(m);
  const std::size_t r = detail::rank_under_cutoff(svd.sigma, rel_tol);
  const auto ri = static_cast<Eigen::Index>(r);
  if (r == 0) return Matrix::Zero(m.cols(), m.rows());
  Vector inv = svd.sigma.head(ri).cwiseInverse();
  return svd.v.leftCols(ri) * inv.asDiagonal() * svd.u.leftCols(ri).transpose();
}

/**
 * Ridgeless (minimum-norm) least squares: among all minimisers of
 * |response - design * b|^2 returns the one with the smallest |b|. Equals
 * OLS whenever design^T design is invertible.
 *
 * rel_tol <= 0 selects default_rel_tol(rows, cols). The reported rank is
 * the numerical rank under the same cutoff.
 */
inline LeastSquaresFit ridgeless_fit(const Matrix& design, const Vector& response,
                                     double rel_tol = -1.0) {
  require(design.rows() >= 1 && design.cols() >= 1, "ridgeless_fit: empty design");
  if (design.rows() != response.size()) {
    throw ContractViolation("ridgeless_fit: design has " + std::to_string(design.rows()) +
                            " rows but response has length " +
                            std::to_string(response.size()));
  }
  detail::check_finite(design, "design");
  if (!all_finite(response)) throw InvalidData("response contains NaN or Inf");
  if (rel_tol <= 0.0) rel_tol = default_rel_tol(design.rows(), design.cols());

  const Eigen::Index cols = design.cols();
  LeastSquaresFit fit;

  // Clearly full column rank: the minimiser is unique, so the pivoted-QR
  // solution is the minimum-norm one. The margin keeps the reported rank
  // identical to the SVD rank under rel_tol.
  if (design.rows() >= cols) {
    Eigen::ColPivHouseholderQR<Matrix> qr(design);
    const auto diag = qr.matrixQR().diagonal().cwiseAbs();
    const double largest = diag.maxCoeff();
    if (largest > 0.0 && diag.minCoeff() > kFullRankMargin * rel_tol * largest) {
      fit.coefficients = qr.solve(response);
      fit.rank = static_cast<std::size_t>(cols);
      fit.residual_sum_squares = (response - design * fit.coefficients).squaredNorm();
      return fit;
    }
  }

  // Tall designs: solve on the triangular factor of a Householder QR. The
  // orthogonal factor preserves singular values, so the cutoff is unchanged.
  Matrix reduced;
  Vector rhs;
  if (design.rows() > 2 * cols) {
    Eigen::HouseholderQR<Matrix> qr(design);
    reduced = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
    rhs = (qr.householderQ().adjoint() * response).head(cols);
  } else {
    reduced = design;
    rhs = response;
  }
  Eigen::BDCSVD<Matrix> svd(reduced, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sigma = svd.singularValues();
  fit.rank = detail::rank_under_cutoff(sigma, rel_tol);
  const auto r = static_cast<Eigen::Index>(fit.rank);
  if (r == 0) {
    fit.coefficients = Vector::Zero(cols);
  } else {
    Vector projected = svd.matrixU().leftCols(r).transpose() * rhs;
    projected.array() /= sigma.head(r).array();
    fit.coefficients = svd.matrixV().leftCols(r) * projected;
  }
  fit.residual_sum_squares = (response - design * fit.coefficients).squaredNorm();
  return fit;
}

/**
 * Orthogonal projector onto the column space of a full-column-rank design,
 * H = X (X^T X)^{-1} X^T. Throws RankDeficiency otherwise.
 */
inline Matrix hat_matrix(const Matrix& design) {
  require(design.rows() >= 1 && design.cols() >= 1, "hat_matrix: empty design");
  detail::check_finite(design, "design");
  const auto svd = detail::thin_svd(design);
  const std::size_t r =
      detail::rank_under_cutoff(svd.sigma, default_rel_tol(design.rows(), design.cols()));
  if (r != static_cast<std::size_t>(design.cols())) {
    throw RankDeficiency("hat_matrix: design has rank " + std::to_string(r) + " < " +
                         std::to_string(design.cols()) + " columns");
  }
  const auto ri = static_cast<Eigen::Index>(r);
  Matrix u = svd.u.leftCols(ri);
  Matrix h = u * u.transpose();
  return (0.5 * (h + h.transpose())).eval();
}

/// Orthonormal basis (columns) of the null space of m.
inline Matrix null_space_basis(const Matrix& m, double rel_tol = -1.0) {
  detail::check_finite(m, "matrix");
  if (rel_tol <= 0.0) rel_tol = default_rel_tol(m.rows(), m.cols());
  Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeFullV);
  const std::size_t r = detail::rank_under_cutoff(svd.singularValues(), rel_tol);
  const auto ri = static_cast<Eigen::Index>(r);
  return svd.matrixV().rightCols(m.cols() - ri);
}

}  // namespace avrc
