#pragma once

// Expected-error identities for merging two of three regression models, and
// the Monte Carlo harness that checks them.
//
// Convention: the (a, b) noise block is Sigma_ab = E[eps_a eps_b^T], so that
// E[eps_b^T A eps_a] = Tr(A Sigma_ab). The printed forms assume symmetric
// cross blocks; the functions below use the transpose-correct ordering,
// which coincides with them in that case.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "avrc/errors.hpp"
#include "avrc/gaussian.hpp"
#include "avrc/linalg.hpp"
#include "avrc/model.hpp"
#include "avrc/parallel.hpp"
#include "avrc/random.hpp"
#include "avrc/synth.hpp"

namespace avrc {

/// Three true models y_m = X_m beta_m + W_m theta_m + eps_m. The rows of W_m
/// are i.i.d. N(0, latent_cov[m]); eps = (eps_1, eps_2, eps_3) ~ N(0, noise_cov).
struct ThreeModelInstance {
  std::array<Matrix, 3> designs;
  std::array<Vector, 3> beta;
  std::array<Vector, 3> theta;       // length q_m; may be empty
  std::array<Matrix, 3> latent_cov;  // q_m x q_m
  Matrix noise_cov;                  // 3n x 3n

  Eigen::Index n() const { return designs[0].rows(); }

  Matrix block(int a, int b) const {
    const Eigen::Index nn = n();
    return noise_cov.block((a - 1) * nn, (b - 1) * nn, nn, nn);
  }

  void validate() const {
    const Eigen::Index nn = n();
    require(nn >= 1, "ThreeModelInstance: empty design");
    for (int m = 0; m < 3; ++m) {
      require(designs[m].rows() == nn, "ThreeModelInstance: designs differ in row count");
      require(beta[m].size() == designs[m].cols(), "ThreeModelInstance: beta length mismatch");
      require(latent_cov[m].rows() == theta[m].size() && latent_cov[m].cols() == theta[m].size(),
              "ThreeModelInstance: latent covariance does not match theta");
      if (!designs[m].allFinite() || !beta[m].allFinite() || !theta[m].allFinite() ||
          !latent_cov[m].allFinite()) {
        throw InvalidData("ThreeModelInstance: non-finite entries");
      }
    }
    require(noise_cov.rows() == 3 * nn && noise_cov.cols() == 3 * nn,
            "ThreeModelInstance: noise covariance must be 3n x 3n");
    if (!noise_cov.allFinite()) throw InvalidData("ThreeModelInstance: non-finite covariance");
    Matrix joint(designs[0].rows(), designs[0].cols() + designs[1].cols());
    joint << designs[0], designs[1];
    if (numerical_rank(joint) != static_cast<std::size_t>(joint.cols())) {
      throw RankDeficiency("ThreeModelInstance: (X1, X2) is not of full column rank");
    }
  }
};

/// Projectors H_1, H_2, H_3 and H for the joint design (X_1, X_2).
struct ThreeModelProjectors {
  Matrix h1, h2, h3, h;

  explicit ThreeModelProjectors(const ThreeModelInstance& inst) {
    h1 = hat_matrix(inst.designs[0]);
    h2 = hat_matrix(inst.designs[1]);
    h3 = hat_matrix(inst.designs[2]);
    Matrix joint(inst.n(), inst.designs[0].cols() + inst.designs[1].cols());
    joint << inst.designs[0], inst.designs[1];
    h = hat_matrix(joint);
  }
};

namespace detail {

inline double trace_product(const Matrix& a, const Matrix& b) {
  // Tr(A B) without forming the product.
  return a.cwiseProduct(b.transpose()).sum();
}

inline double quad(const Vector& theta, const Matrix& cov) {
  return theta.size() == 0 ? 0.0 : theta.dot(cov * theta);
}

// Tr(H) - Tr(H_m): the parameter count gained by model m when merged.
inline double added_params(const ThreeModelProjectors& pr, int m) {
  return pr.h.trace() - (m == 1 ? pr.h1 : pr.h2).trace();
}

inline double bias_part(const ThreeModelInstance& inst, const ThreeModelProjectors& pr) {
  return -added_params(pr, 1) * quad(inst.theta[0], inst.latent_cov[0]) -
         added_params(pr, 2) * quad(inst.theta[1], inst.latent_cov[1]);
}

inline Vector latent_signal(const Matrix& w, const Vector& theta, Eigen::Index n) {
  return theta.size() == 0 ? Vector::Zero(n) : Vector(w * theta);
}

}  // namespace detail

/// E[R] with R = (y_3 - yhat_3)^T (yhat_IR - yhat_AVR) over models 1 and 2.
inline double expected_R(const ThreeModelInstance& inst) {
  inst.validate();
  const ThreeModelProjectors pr(inst);
  const Eigen::Index n = inst.n();
  const Matrix i3 = Matrix::Identity(n, n) - pr.h3;
  return detail::trace_product(i3 * (pr.h1 - pr.h), inst.block(1, 3)) +
         detail::trace_product(i3 * (pr.h2 - pr.h), inst.block(2, 3));
}

/// E[R | W] for fixed latent designs.
inline double expected_R_given_W(const ThreeModelInstance& inst, const std::array<Matrix, 3>& w) {
  const ThreeModelProjectors pr(inst);
  const Eigen::Index n = inst.n();
  const Matrix i3 = Matrix::Identity(n, n) - pr.h3;
  const Vector a1 = detail::latent_signal(w[0], inst.theta[0], n);
  const Vector a2 = detail::latent_signal(w[1], inst.theta[1], n);
  const Vector a3 = detail::latent_signal(w[2], inst.theta[2], n);
  return expected_R(inst) + a3.dot(i3 * (pr.h1 - pr.h) * a1) + a3.dot(i3 * (pr.h2 - pr.h) * a2);
}

namespace detail {

inline double test_trace_part(const ThreeModelInstance& inst, const ThreeModelProjectors& pr) {
  return trace_product(pr.h - pr.h1, inst.block(1, 1)) +
         trace_product(pr.h - pr.h2, inst.block(2, 2)) +
         2.0 * trace_product(pr.h - pr.h2 * pr.h1, inst.block(1, 2)) +
         2.0 * trace_product(pr.h3 * (pr.h - pr.h1), inst.block(1, 3)) +
         2.0 * trace_product(pr.h3 * (pr.h - pr.h2), inst.block(2, 3));
}

inline double train_trace_part(const ThreeModelInstance& inst, const ThreeModelProjectors& pr) {
  return trace_product(pr.h1 - pr.h, inst.block(1, 1)) +
         trace_product(pr.h2 - pr.h, inst.block(2, 2)) +
         2.0 * trace_product(pr.h1 + pr.h2 - pr.h - pr.h2 * pr.h1, inst.block(1, 2));
}

}  // namespace detail

/// Trace and bias parts of the expected test-error difference (merged minus
/// separate), with test predictors equal to the training predictors.
struct TestErrorDecomposition {
  double trace_part = 0.0;  // >= 0 for entrywise nonnegative covariances
  double bias_part = 0.0;   // <= 0 always
  double total() const { return trace_part + bias_part; }
};

inline TestErrorDecomposition test_error_decomposition(const ThreeModelInstance& inst) {
  inst.validate();
  const ThreeModelProjectors pr(inst);
  return {detail::test_trace_part(inst, pr), detail::bias_part(inst, pr)};
}

inline double expected_test_error_diff(const ThreeModelInstance& inst) {
  return test_error_decomposition(inst).total();
}

/// Conditional-on-W test-error difference, term by term.
inline double expected_test_error_diff_given_W(const ThreeModelInstance& inst,
                                               const std::array<Matrix, 3>& w) {
  inst.validate();
  const ThreeModelProjectors pr(inst);
  const Eigen::Index n = inst.n();
  const Matrix eye = Matrix::Identity(n, n);
  const Vector a1 = detail::latent_signal(w[0], inst.theta[0], n);
  const Vector a2 = detail::latent_signal(w[1], inst.theta[1], n);
  const Vector a3 = detail::latent_signal(w[2], inst.theta[2], n);
  const Matrix i3 = eye - pr.h3;
  double out = detail::test_trace_part(inst, pr);
  out += ((eye - pr.h) * a1).squaredNorm() - ((eye - pr.h1) * a1).squaredNorm();
  out += ((eye - pr.h) * a2).squaredNorm() - ((eye - pr.h2) * a2).squaredNorm();
  out += 2.0 * a1.dot((eye - pr.h) * a2) - 2.0 * a1.dot((eye - pr.h1) * ((eye - pr.h2) * a2));
  out += 2.0 * a3.dot(i3 * ((pr.h1 - pr.h) * a1)) + 2.0 * a3.dot(i3 * ((pr.h2 - pr.h) * a2));
  return out;
}

/// Expected training-error difference for models 1 and 2 alone (AVR minus IR).
inline double expected_train_error_diff(const ThreeModelInstance& inst) {
  inst.validate();
  const ThreeModelProjectors pr(inst);
  return detail::train_trace_part(inst, pr) + detail::bias_part(inst, pr);
}

/// Same quantity when Sigma_mm' = sigma_mm' I:
/// -p sigma_11 - p sigma_22 - 2 Tr(H_1 H_2) sigma_12 - p theta_1^T S_1 theta_1 - p theta_2^T S_2 theta_2.
inline double expected_train_error_diff_scalar(const Matrix& x1, const Matrix& x2,
                                               double sigma11, double sigma22, double sigma12,
                                               const Vector& theta1, const Matrix& latent_cov1,
                                               const Vector& theta2, const Matrix& latent_cov2) {
  require(x1.cols() == x2.cols(), "scalar form assumes equal predictor counts");
  const Matrix h1 = hat_matrix(x1);
  const Matrix h2 = hat_matrix(x2);
  const double p = static_cast<double>(x1.cols());
  return -p * sigma11 - p * sigma22 - 2.0 * detail::trace_product(h1, h2) * sigma12 -
         p * detail::quad(theta1, latent_cov1) - p * detail::quad(theta2, latent_cov2);
}

/// Monte Carlo estimate against a closed form.
struct ExpectationReport {
  double closed_form = 0.0;
  double mc_mean = 0.0;
  double mc_se = 0.0;
  std::size_t replicates = 0;
  double z_score = 0.0;
};

inline ExpectationReport make_report(double closed_form, const std::vector<double>& samples) {
  require(samples.size() >= 2, "Monte Carlo report needs at least two replicates");
  ExpectationReport r;
  r.closed_form = closed_form;
  r.replicates = samples.size();
  const double count = static_cast<double>(samples.size());
  double sum = 0.0;
  for (double s : samples) sum += s;
  r.mc_mean = sum / count;
  double ss = 0.0;
  for (double s : samples) ss += (s - r.mc_mean) * (s - r.mc_mean);
  r.mc_se = std::sqrt(ss / (count - 1.0) / count);
  const double gap = r.mc_mean - closed_form;
  if (r.mc_se > 0.0) {
    r.z_score = gap / r.mc_se;
  } else {
    const double scale = std::max({1.0, std::abs(closed_form), std::abs(r.mc_mean)});
    r.z_score = std::abs(gap) <= 1e-9 * scale ? 0.0 : std::numeric_limits<double>::infinity();
  }
  return r;
}

/// E[|(I-H) W theta|^2 - |(I-H_m) W theta|^2] = -(Tr H - Tr H_m) theta^T S theta,
/// and the intermediate identity E|(I-H_m) W theta|^2 = Tr(I-H_m) theta^T S theta.
struct BiasCheck {
  ExpectationReport difference;
  ExpectationReport intermediate;
};

inline BiasCheck bias_term_check(const Matrix& h, const Matrix& h_m, const Vector& theta,
                                 const Matrix& latent_cov, std::size_t replicates,
                                 std::uint64_t seed, unsigned threads = 1) {
  const Eigen::Index n = h.rows();
  require(h.cols() == n && h_m.rows() == n && h_m.cols() == n, "bias_term_check: bad projectors");
  require(latent_cov.rows() == theta.size() && latent_cov.cols() == theta.size(),
          "bias_term_check: covariance does not match theta");
  const Matrix factor = covariance_factor(latent_cov);
  const Matrix eye = Matrix::Identity(n, n);
  const Matrix rh = eye - h;
  const Matrix rm = eye - h_m;
  std::vector<double> diff(replicates), inter(replicates);
  parallel_for(replicates, threads, [&](std::size_t r) {
    Rng rng(seed, StreamRole::kTheory, r);
    Matrix w(n, theta.size());
    for (Eigen::Index i = 0; i < n; ++i) {
      w.row(i) = (factor * standard_normal_vector(rng, theta.size())).transpose();
    }
    const Vector a = w * theta;
    const double sm = (rm * a).squaredNorm();
    diff[r] = (rh * a).squaredNorm() - sm;
    inter[r] = sm;
  });
  const double q = detail::quad(theta, latent_cov);
  BiasCheck out;
  out.difference = make_report(-(h.trace() - h_m.trace()) * q, diff);
  out.intermediate = make_report(rm.trace() * q, inter);
  return out;
}

enum class ErrorQuantity { kR, kTrain, kTest };

/// Realized R, training difference and test difference from one draw.
struct RealizedDifferences {
  double r = 0.0;
  double train = 0.0;
  double test = 0.0;
};

namespace detail {

inline Matrix draw_latent(Rng& rng, Eigen::Index n, const Matrix& factor) {
  Matrix w(n, factor.rows());
  for (Eigen::Index i = 0; i < n; ++i) {
    w.row(i) = (factor * standard_normal_vector(rng, factor.cols())).transpose();
  }
  return w;
}

}  // namespace detail

/**
 * Draws (eps, eta, W), builds responses from the true models, fits
 * AVR-C({1,2},{3}) and IR through fit_avrc, and returns the realized
 * differences. Test responses reuse the training predictors and W with a
 * fresh error draw eta.
 */
inline RealizedDifferences realize_differences(const ThreeModelInstance& inst,
                                               const Matrix& noise_factor,
                                               const std::array<Matrix, 3>& latent_factors,
                                               Rng& rng) {
  const Eigen::Index n = inst.n();
  const Vector eps = noise_factor * standard_normal_vector(rng, 3 * n);
  const Vector eta = noise_factor * standard_normal_vector(rng, 3 * n);
  std::vector<RegressionProblem> problems;
  std::vector<Matrix> test_designs;
  std::vector<Vector> test_responses;
  for (int m = 0; m < 3; ++m) {
    const Matrix w = detail::draw_latent(rng, n, latent_factors[m]);
    const Vector signal =
        inst.designs[m] * inst.beta[m] + detail::latent_signal(w, inst.theta[m], n);
    problems.push_back({inst.designs[m], signal + eps.segment(m * n, n), m + 1});
    test_designs.push_back(inst.designs[m]);
    test_responses.push_back(signal + eta.segment(m * n, n));
  }
  const ModelCollection collection(std::move(problems));
  const AvrcFit merged = fit_avrc(collection, ClusterPartition({{1, 2}, {3}}, 3));
  const AvrcFit separate = fit_avrc(collection, ClusterPartition::singletons(3));

  auto fitted = [&](const AvrcFit& fit, int id) -> Vector {
    return collection.problem(id).design * fit.coefficients(id);
  };
  const Vector y12 = collection.problem(1).response + collection.problem(2).response;
  const Vector yhat_merged = fitted(merged, 1) + fitted(merged, 2);
  const Vector yhat_separate = fitted(separate, 1) + fitted(separate, 2);
  const Vector resid3 = collection.problem(3).response - fitted(separate, 3);

  RealizedDifferences out;
  out.r = resid3.dot(yhat_separate - yhat_merged);
  out.train = (y12 - yhat_merged).squaredNorm() - (y12 - yhat_separate).squaredNorm();
  out.test = aggregate_test_error(merged, test_designs, test_responses) -
             aggregate_test_error(separate, test_designs, test_responses);
  return out;
}

/// All three Monte Carlo reports from one set of draws.
struct ThreeModelReports {
  ExpectationReport r;
  ExpectationReport train;
  ExpectationReport test;
};

inline ThreeModelReports monte_carlo_all(const ThreeModelInstance& inst, std::size_t replicates,
                                         std::uint64_t seed, unsigned threads = 1) {
  require(replicates >= 100, "Monte Carlo needs at least 100 replicates");
  inst.validate();
  const Matrix noise_factor = covariance_factor(inst.noise_cov);
  std::array<Matrix, 3> latent_factors;
  for (int m = 0; m < 3; ++m) {
    latent_factors[m] = inst.theta[m].size() == 0 ? Matrix(0, 0)
                                                  : covariance_factor(inst.latent_cov[m]);
  }
  std::vector<RealizedDifferences> draws(replicates);
  parallel_for(replicates, threads, [&](std::size_t i) {
    Rng rng(seed, StreamRole::kTheory, i);
    draws[i] = realize_differences(inst, noise_factor, latent_factors, rng);
  });
  std::vector<double> r(replicates), train(replicates), test(replicates);
  for (std::size_t i = 0; i < replicates; ++i) {
    r[i] = draws[i].r;
    train[i] = draws[i].train;
    test[i] = draws[i].test;
  }
  return {make_report(expected_R(inst), r), make_report(expected_train_error_diff(inst), train),
          make_report(expected_test_error_diff(inst), test)};
}

inline ExpectationReport monte_carlo_error_diff(const ThreeModelInstance& inst,
                                                std::size_t replicates, std::uint64_t seed,
                                                ErrorQuantity quantity, unsigned threads = 1) {
  const ThreeModelReports all = monte_carlo_all(inst, replicates, seed, threads);
  switch (quantity) {
    case ErrorQuantity::kR: return all.r;
    case ErrorQuantity::kTrain: return all.train;
    case ErrorQuantity::kTest: return all.test;
  }
  return all.r;
}

/// Options for random_three_model_instance.
struct InstanceOptions {
  Eigen::Index n = 30;
  Eigen::Index p = 2;
  Eigen::Index q = 2;
  bool misspecified = true;
  double max_cross_correlation = 0.45;  // off-diagonal model correlations ~ U(0, this)
  double kernel_rho = 0.0;              // within-model AR(1) kernel; 0 gives sigma_mm' I
};

/**
 * Random instance with nonnegative cross-model covariances:
 * Sigma_ab = S_ab K, S a 3x3 covariance with nonnegative entries and K an
 * AR(1) kernel over observations (identity when kernel_rho = 0).
 */
inline ThreeModelInstance random_three_model_instance(std::uint64_t seed,
                                                      const InstanceOptions& opt = {}) {
  require(opt.max_cross_correlation >= 0.0 && opt.max_cross_correlation < 0.5,
          "cross correlation bound must lie in [0, 0.5)");
  Rng rng(seed, StreamRole::kTheory, 0xFFFF'FFFFull);
  ThreeModelInstance inst;
  const Eigen::Index q = opt.misspecified ? opt.q : 0;
  for (int m = 0; m < 3; ++m) {
    inst.designs[m] = detail::uniform_matrix(rng, opt.n, opt.p, 0.0, 3.0);
    inst.beta[m].resize(opt.p);
    for (Eigen::Index j = 0; j < opt.p; ++j) inst.beta[m](j) = rng.uniform();
    inst.theta[m].resize(q);
    for (Eigen::Index j = 0; j < q; ++j) inst.theta[m](j) = rng.uniform();
    const Matrix a = detail::uniform_matrix(rng, q, q, -1.0, 1.0);
    inst.latent_cov[m] = a * a.transpose() / std::max<double>(1.0, static_cast<double>(q)) +
                         0.5 * Matrix::Identity(q, q);
  }
  // Unit-ish variances with a diagonally dominant correlation: PSD by construction.
  Vector sd(3);
  for (int m = 0; m < 3; ++m) sd(m) = std::sqrt(rng.uniform(0.5, 1.5));
  Matrix s = Matrix::Identity(3, 3);
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      s(a, b) = s(b, a) = rng.uniform(0.0, opt.max_cross_correlation);
    }
  }
  s = sd.asDiagonal() * s * sd.asDiagonal();
  Matrix kernel(opt.n, opt.n);
  for (Eigen::Index i = 0; i < opt.n; ++i)
    for (Eigen::Index j = 0; j < opt.n; ++j)
      kernel(i, j) = std::pow(opt.kernel_rho, static_cast<double>(std::abs(i - j)));
  inst.noise_cov.resize(3 * opt.n, 3 * opt.n);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      inst.noise_cov.block(a * opt.n, b * opt.n, opt.n, opt.n) = s(a, b) * kernel;
  return inst;
}

/// Effect of one merge on the total aggregate training error, over replicate datasets.
struct MergeEffectReport {
  double mean_before = 0.0;
  double mean_after = 0.0;
  double mean_difference = 0.0;  // after - before
  double se_difference = 0.0;
  std::size_t replicates = 0;
};

/**
 * For each replicate, draws a dataset from `config` (seeded per replicate),
 * fits both partitions and records the change in total training error.
 */
inline MergeEffectReport monte_carlo_merge_effect(const SynthConfig& config,
                                                  const ClusterPartition& before,
                                                  const ClusterPartition& after,
                                                  std::size_t replicates, std::uint64_t seed,
                                                  unsigned threads = 1) {
  require(replicates >= 2, "merge effect needs at least two replicates");
  std::vector<double> err_before(replicates), err_after(replicates);
  parallel_for(replicates, threads, [&](std::size_t r) {
    SynthConfig c = config;
    c.seed = derive_seed(seed, {static_cast<std::uint64_t>(StreamRole::kReplicate), r});
    const SynthDataset ds = generate(c);
    err_before[r] = aggregate_training_error(ds.train, fit_avrc(ds.train, before));
    err_after[r] = aggregate_training_error(ds.train, fit_avrc(ds.train, after));
  });
  std::vector<double> diff(replicates);
  MergeEffectReport out;
  out.replicates = replicates;
  for (std::size_t r = 0; r < replicates; ++r) {
    out.mean_before += err_before[r];
    out.mean_after += err_after[r];
    diff[r] = err_after[r] - err_before[r];
  }
  out.mean_before /= static_cast<double>(replicates);
  out.mean_after /= static_cast<double>(replicates);
  const ExpectationReport rep = make_report(0.0, diff);
  out.mean_difference = rep.mc_mean;
  out.se_difference = rep.mc_se;
  return out;
}

}  // namespace avrc
