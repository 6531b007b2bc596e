#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "avrc/linalg.hpp"
#include "avrc/model.hpp"
#include "avrc/random.hpp"

namespace avrc::testing {

inline Matrix gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

inline Matrix uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = 0.0,
                             double hi = 3.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

inline Vector gaussian_vector(Rng& rng, Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

/// M models with Gaussian designs and arbitrary (pure noise) responses.
inline ModelCollection random_collection(Rng& rng, int m, Eigen::Index n, Eigen::Index p) {
  std::vector<RegressionProblem> problems;
  for (int id = 1; id <= m; ++id) {
    problems.push_back({gaussian_matrix(rng, n, p), gaussian_vector(rng, n), id});
  }
  return ModelCollection(std::move(problems));
}

/// Correlated-noise collection: y_m = X_m b_m + e_m with a shared component in e.
inline ModelCollection correlated_collection(Rng& rng, int m, Eigen::Index n, Eigen::Index p,
                                             double shared = 0.7) {
  const Vector common = gaussian_vector(rng, n);
  std::vector<RegressionProblem> problems;
  for (int id = 1; id <= m; ++id) {
    Matrix x = uniform_matrix(rng, n, p);
    Vector b(p);
    for (Eigen::Index j = 0; j < p; ++j) b(j) = rng.uniform();
    const double w = rng.uniform(0.0, shared);
    Vector y = x * b + w * common + (1.0 - w) * gaussian_vector(rng, n);
    problems.push_back({std::move(x), std::move(y), id});
  }
  return ModelCollection(std::move(problems));
}

/// Coefficients from the explicit normal equations (X^T X) b = X^T y.
inline Vector normal_equations(const Matrix& x, const Vector& y) {
  const Matrix g = x.transpose() * x;
  return g.ldlt().solve(x.transpose() * y);
}

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

inline double rel_diff(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("avrc_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace avrc::testing
