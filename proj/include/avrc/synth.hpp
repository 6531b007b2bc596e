#pragma once

// Seeded synthetic collections of regression models.
//
// Every array is drawn from its own stream keyed by (seed, role, model id),
// so a dataset is fully determined by its config and does not depend on the
// order in which models are generated.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "avrc/errors.hpp"
#include "avrc/gaussian.hpp"
#include "avrc/linalg.hpp"
#include "avrc/model.hpp"
#include "avrc/random.hpp"

namespace avrc {

/// Cross-model error correlation structure, scaled by `variance`.
struct CovarianceSpec {
  enum class Kind { kAr1, kExchangeable, kIndependent, kBlockExchangeable, kExplicit };

  Kind kind = Kind::kIndependent;
  double variance = 1.0;
  double rho = 0.0;         // kAr1: corr = rho^|m - m'|
  double offdiag = 0.0;     // kExchangeable
  int blocks = 1;           // kBlockExchangeable: I_blocks (x) (within 11^T + boost I)
  double within = 0.0;
  double diag_boost = 1.0;
  Matrix explicit_matrix;   // kExplicit: M x M correlation

  static CovarianceSpec independent(double variance = 1.0) {
    CovarianceSpec c;
    c.variance = variance;
    return c;
  }
  static CovarianceSpec ar1(double rho, double variance = 1.0) {
    CovarianceSpec c;
    c.kind = Kind::kAr1;
    c.rho = rho;
    c.variance = variance;
    return c;
  }
  static CovarianceSpec exchangeable(double offdiag, double variance = 1.0) {
    CovarianceSpec c;
    c.kind = Kind::kExchangeable;
    c.offdiag = offdiag;
    c.variance = variance;
    return c;
  }
  static CovarianceSpec block_exchangeable(int blocks, double within, double diag_boost,
                                           double variance = 1.0) {
    CovarianceSpec c;
    c.kind = Kind::kBlockExchangeable;
    c.blocks = blocks;
    c.within = within;
    c.diag_boost = diag_boost;
    c.variance = variance;
    return c;
  }
  static CovarianceSpec explicit_correlation(Matrix r, double variance = 1.0) {
    CovarianceSpec c;
    c.kind = Kind::kExplicit;
    c.explicit_matrix = std::move(r);
    c.variance = variance;
    return c;
  }

  /// The M x M correlation-type matrix R (before scaling by variance).
  Matrix correlation(int m) const {
    require(m >= 1, "CovarianceSpec: model count must be positive");
    Matrix r = Matrix::Identity(m, m);
    switch (kind) {
      case Kind::kIndependent:
        break;
      case Kind::kAr1:
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < m; ++j) r(i, j) = std::pow(rho, std::abs(i - j));
        break;
      case Kind::kExchangeable:
        r.setConstant(offdiag);
        r.diagonal().setOnes();
        break;
      case Kind::kBlockExchangeable: {
        require(blocks >= 1 && m % blocks == 0,
                "CovarianceSpec: model count must be divisible by the block count");
        const int size = m / blocks;
        r.setZero();
        for (int b = 0; b < blocks; ++b) {
          r.block(b * size, b * size, size, size).setConstant(within);
        }
        r.diagonal().array() += diag_boost;
        break;
      }
      case Kind::kExplicit:
        require(explicit_matrix.rows() == m && explicit_matrix.cols() == m,
                "CovarianceSpec: explicit matrix has the wrong size");
        r = explicit_matrix;
        break;
    }
    return r;
  }

  /// variance * R, validated to be symmetric PSD.
  Matrix covariance(int m) const {
    require(variance >= 0.0 && std::isfinite(variance), "CovarianceSpec: bad variance");
    Matrix c = variance * correlation(m);
    covariance_factor(c);
    return c;
  }

  /// Group label (0-based) per model for block structures; empty otherwise.
  std::vector<int> block_labels(int m) const {
    std::vector<int> labels;
    if (kind != Kind::kBlockExchangeable || blocks < 1 || m % blocks != 0) return labels;
    for (int i = 0; i < m; ++i) labels.push_back(i / (m / blocks));
    return labels;
  }
};

enum class TestPredictors { kFresh, kShared };

struct SynthConfig {
  int n = 500;
  int n_test = 500;
  int p = 5;
  int q = 5;  // columns of the unobserved design W_m
  int m = 50;
  double predictor_low = 0.0;  // X_m, W_m entries ~ U(low, high)
  double predictor_high = 3.0;
  double coefficient_low = 0.0;  // beta_m, theta_m entries ~ U(low, high)
  double coefficient_high = 1.0;
  CovarianceSpec covariance;
  bool misspecified = false;
  TestPredictors test_predictors = TestPredictors::kFresh;
  bool freeze_test_latent = false;  // fresh mode: reuse training W_m for the test set
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1 || n_test < 1 || p < 1 || m < 2) {
      throw ConfigError("SynthConfig: need n >= 1, n_test >= 1, p >= 1, M >= 2");
    }
    if (misspecified && q < 1) throw ConfigError("SynthConfig: misspecified model needs q >= 1");
    if (!(predictor_low < predictor_high) || !(coefficient_low <= coefficient_high)) {
      throw ConfigError("SynthConfig: bad uniform bounds");
    }
    if ((test_predictors == TestPredictors::kShared || freeze_test_latent) && n_test != n) {
      throw ConfigError("SynthConfig: shared test predictors require n_test == n");
    }
    try {
      covariance.covariance(m);
    } catch (const Error& e) {
      throw ConfigError(std::string("SynthConfig: ") + e.what());
    }
  }
};

struct SynthDataset {
  SynthConfig config;
  ModelCollection train;
  std::vector<Matrix> test_designs;    // indexed by model_id - 1
  std::vector<Vector> test_responses;
  std::vector<Vector> beta;
  std::vector<Vector> theta;           // empty vectors when correctly specified
  std::vector<Matrix> latent_train;    // W_m; empty when correctly specified
  std::vector<Matrix> latent_test;
  Matrix train_noise;                  // n x M
  Matrix test_noise;                   // n_test x M
};

namespace detail {

inline Matrix uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo,
                             double hi) {
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = rng.uniform(lo, hi);
  return out;
}

// Row i is L z_i: one joint draw across models per observation.
inline Matrix correlated_noise(Rng& rng, Eigen::Index rows, const Matrix& factor) {
  Matrix out(rows, factor.rows());
  for (Eigen::Index i = 0; i < rows; ++i) {
    out.row(i) = (factor * standard_normal_vector(rng, factor.cols())).transpose();
  }
  return out;
}

}  // namespace detail

/// Draws a dataset: X_m, W_m ~ U(0,3), beta_m, theta_m ~ U(0,1), Gaussian
/// errors with per-observation covariance variance * R.
inline SynthDataset generate(const SynthConfig& config) {
  config.validate();
  SynthDataset ds;
  ds.config = config;
  const int m = config.m;
  const std::uint64_t seed = config.seed;
  const Matrix factor = covariance_factor(config.covariance.covariance(m));

  Rng train_noise_rng(seed, StreamRole::kTrainNoise);
  Rng test_noise_rng(seed, StreamRole::kTestNoise);
  ds.train_noise = detail::correlated_noise(train_noise_rng, config.n, factor);
  ds.test_noise = detail::correlated_noise(test_noise_rng, config.n_test, factor);

  const bool shared = config.test_predictors == TestPredictors::kShared;
  std::vector<RegressionProblem> problems;
  for (int id = 1; id <= m; ++id) {
    const auto key = static_cast<std::uint64_t>(id);
    Rng x_rng(seed, StreamRole::kTrainDesign, key);
    Rng xt_rng(seed, StreamRole::kTestDesign, key);
    Rng beta_rng(seed, StreamRole::kCoefficients, key);

    Matrix x = detail::uniform_matrix(x_rng, config.n, config.p, config.predictor_low,
                                      config.predictor_high);
    Matrix x_test = shared ? x
                           : detail::uniform_matrix(xt_rng, config.n_test, config.p,
                                                    config.predictor_low, config.predictor_high);
    Vector beta(config.p);
    for (int j = 0; j < config.p; ++j)
      beta(j) = beta_rng.uniform(config.coefficient_low, config.coefficient_high);

    Vector y = x * beta + ds.train_noise.col(id - 1);
    Vector z = x_test * beta + ds.test_noise.col(id - 1);

    Vector theta;
    Matrix w, w_test;
    if (config.misspecified) {
      Rng theta_rng(seed, StreamRole::kLatentCoefficients, key);
      Rng w_rng(seed, StreamRole::kTrainLatent, key);
      Rng wt_rng(seed, StreamRole::kTestLatent, key);
      theta.resize(config.q);
      for (int j = 0; j < config.q; ++j)
        theta(j) = theta_rng.uniform(config.coefficient_low, config.coefficient_high);
      w = detail::uniform_matrix(w_rng, config.n, config.q, config.predictor_low,
                                 config.predictor_high);
      w_test = (shared || config.freeze_test_latent)
                   ? w
                   : detail::uniform_matrix(wt_rng, config.n_test, config.q,
                                            config.predictor_low, config.predictor_high);
      y += w * theta;
      z += w_test * theta;
    }

    problems.push_back({std::move(x), std::move(y), id});
    ds.test_designs.push_back(std::move(x_test));
    ds.test_responses.push_back(std::move(z));
    ds.beta.push_back(std::move(beta));
    ds.theta.push_back(std::move(theta));
    ds.latent_train.push_back(std::move(w));
    ds.latent_test.push_back(std::move(w_test));
  }
  ds.train = ModelCollection(std::move(problems));
  return ds;
}

/// The three correlation settings of the training-error monotonicity study:
/// AR(1) with rho = -0.8, independent, exchangeable 0.6. Unit variances,
/// correctly specified, M = 50, n = 500, p = 5.
inline std::vector<SynthConfig> merge_path_configs(std::uint64_t seed = 0) {
  std::vector<SynthConfig> out;
  for (const CovarianceSpec& cov : {CovarianceSpec::ar1(-0.8), CovarianceSpec::independent(),
                                    CovarianceSpec::exchangeable(0.6)}) {
    SynthConfig c;
    c.n = 500;
    c.n_test = 500;
    c.p = 5;
    c.q = 5;
    c.m = 50;
    c.covariance = cov;
    c.misspecified = false;
    c.seed = seed;
    out.push_back(c);
  }
  return out;
}

/// Ten-block exchangeable design used by the test-error experiments:
/// R = I_10 (x) (0.9 11^T + 0.1 I), misspecified, fresh test predictors.
inline SynthConfig block_simulation_config(int m, int n, double variance, std::uint64_t seed) {
  SynthConfig c;
  c.n = n;
  c.n_test = 500;
  c.p = 5;
  c.q = 5;
  c.m = m;
  c.covariance = CovarianceSpec::block_exchangeable(10, 0.9, 0.1, variance);
  c.misspecified = true;
  c.seed = seed;
  return c;
}

}  // namespace avrc
