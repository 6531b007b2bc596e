#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "avrc/errors.hpp"
#include "avrc/linalg.hpp"
#include "avrc/random.hpp"

namespace avrc {

/**
 * Factor a covariance matrix as L L^T through its symmetric
 * eigendecomposition. Eigenvalues below -1e-10 * scale are rejected as not
 * PSD; smaller negative ones are clamped to zero.
 */
inline Matrix covariance_factor(const Matrix& cov) {
  require(cov.rows() == cov.cols() && cov.rows() >= 1, "covariance must be square");
  if (!cov.allFinite()) throw InvalidData("covariance contains NaN or Inf");
  const double scale = problem_scale(cov);
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw NumericalFailure("covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (cov + cov.transpose()));
  if (eig.info() != Eigen::Success) throw NumericalFailure("covariance eigendecomposition failed");
  Vector values = eig.eigenvalues();
  if (values.minCoeff() < -1e-10 * scale) {
    throw NumericalFailure("covariance is not positive semidefinite (min eigenvalue " +
                           std::to_string(values.minCoeff()) + ")");
  }
  values = values.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * values.asDiagonal();
}

inline bool is_psd(const Matrix& cov) {
  try {
    covariance_factor(cov);
    return true;
  } catch (const Error&) {
    return false;
  }
}

inline Vector standard_normal_vector(Rng& rng, Eigen::Index size) {
  Vector z(size);
  for (Eigen::Index i = 0; i < size; ++i) z(i) = rng.normal();
  return z;
}

}  // namespace avrc
