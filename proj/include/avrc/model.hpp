#pragma once

// Collections of linear regression models and their aggregate-value fits.
//
// A partition of the models into clusters is fitted cluster by cluster: the
// members' responses are summed, their designs concatenated column-wise in
// ascending model-id order, and the joint problem is solved with the
// ridgeless estimator. Singletons reproduce individual regression (IR); a
// single cluster reproduces the full aggregate value regression (AVR).

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "avrc/errors.hpp"
#include "avrc/linalg.hpp"
#include "avrc/parallel.hpp"

namespace avrc {

/// One model: response = design * beta + error. Ids are 1-based.
struct RegressionProblem {
  Matrix design;
  Vector response;
  int model_id = 0;
};

/// M aligned problems sharing the observation count n and predictor count p.
class ModelCollection {
 public:
  ModelCollection() = default;

  explicit ModelCollection(std::vector<RegressionProblem> problems)
      : problems_(std::move(problems)) {
    require(!problems_.empty(), "ModelCollection: no problems");
    std::sort(problems_.begin(), problems_.end(),
              [](const auto& a, const auto& b) { return a.model_id < b.model_id; });
    n_ = problems_.front().design.rows();
    p_ = problems_.front().design.cols();
    for (std::size_t i = 0; i < problems_.size(); ++i) {
      const auto& pr = problems_[i];
      if (pr.model_id != static_cast<int>(i) + 1) {
        throw ContractViolation("ModelCollection: model ids must be exactly 1..M");
      }
      if (pr.design.rows() != pr.response.size()) {
        throw ContractViolation("ModelCollection: model " + std::to_string(pr.model_id) +
                                " design rows != response length");
      }
      if (pr.design.rows() != n_) {
        throw ContractViolation("ModelCollection: model " + std::to_string(pr.model_id) +
                                " has a different observation count");
      }
      if (pr.design.cols() != p_) {
        throw ContractViolation("ModelCollection: model " + std::to_string(pr.model_id) +
                                " has a different predictor count");
      }
      if (!pr.design.allFinite() || !pr.response.allFinite()) {
        throw InvalidData("ModelCollection: model " + std::to_string(pr.model_id) +
                          " contains NaN or Inf");
      }
    }
    require(n_ >= 1 && p_ >= 1, "ModelCollection: empty designs");
  }

  int size() const { return static_cast<int>(problems_.size()); }
  Eigen::Index n() const { return n_; }
  Eigen::Index p() const { return p_; }

  const RegressionProblem& problem(int model_id) const {
    require(model_id >= 1 && model_id <= size(),
            "model id " + std::to_string(model_id) + " out of range");
    return problems_[static_cast<std::size_t>(model_id - 1)];
  }
  const std::vector<RegressionProblem>& problems() const { return problems_; }

  /// Sum of all responses.
  Vector aggregate_response() const {
    Vector total = Vector::Zero(n_);
    for (const auto& pr : problems_) total += pr.response;
    return total;
  }

 private:
  std::vector<RegressionProblem> problems_;
  Eigen::Index n_ = 0;
  Eigen::Index p_ = 0;
};

/// Sorted model ids of one cluster.
using ClusterMembers = std::vector<int>;

/// Disjoint, covering grouping of model ids 1..M into nonempty clusters.
/// Cluster order is kept as given; members are sorted within each cluster.
class ClusterPartition {
 public:
  ClusterPartition() = default;

  ClusterPartition(std::vector<ClusterMembers> clusters, int model_count)
      : clusters_(std::move(clusters)), model_count_(model_count) {
    require(model_count_ >= 1, "ClusterPartition: model count must be positive");
    std::vector<int> seen(static_cast<std::size_t>(model_count_), 0);
    for (auto& c : clusters_) {
      require(!c.empty(), "ClusterPartition: empty cluster");
      std::sort(c.begin(), c.end());
      for (int id : c) {
        require(id >= 1 && id <= model_count_,
                "ClusterPartition: model id " + std::to_string(id) + " out of range");
        require(seen[static_cast<std::size_t>(id - 1)]++ == 0,
                "ClusterPartition: model " + std::to_string(id) + " appears twice");
      }
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
      require(seen[i] == 1,
              "ClusterPartition: model " + std::to_string(i + 1) + " not covered");
    }
  }

  static ClusterPartition singletons(int model_count) {
    std::vector<ClusterMembers> c;
    for (int m = 1; m <= model_count; ++m) c.push_back({m});
    return ClusterPartition(std::move(c), model_count);
  }

  static ClusterPartition single_cluster(int model_count) {
    ClusterMembers all(static_cast<std::size_t>(model_count));
    std::iota(all.begin(), all.end(), 1);
    return ClusterPartition({std::move(all)}, model_count);
  }

  const std::vector<ClusterMembers>& clusters() const { return clusters_; }
  std::size_t size() const { return clusters_.size(); }
  int model_count() const { return model_count_; }

  /// Cluster index containing each model (0-based, indexed by model_id - 1).
  std::vector<std::size_t> labels() const {
    std::vector<std::size_t> out(static_cast<std::size_t>(model_count_));
    for (std::size_t j = 0; j < clusters_.size(); ++j) {
      for (int id : clusters_[j]) out[static_cast<std::size_t>(id - 1)] = j;
    }
    return out;
  }

 private:
  std::vector<ClusterMembers> clusters_;
  int model_count_ = 0;
};

/// Ridgeless fit of one cluster; coefficients stacked in member order.
struct ClusterFit {
  ClusterMembers members;
  Vector coefficients;
  std::size_t rank = 0;
};

/// Per-model coefficients obtained by fitting every cluster of a partition.
struct AvrcFit {
  ClusterPartition partition;
  std::vector<Vector> per_model_coefficients;  // indexed by model_id - 1
  std::vector<std::size_t> per_cluster_rank;   // aligned with partition.clusters()

  const Vector& coefficients(int model_id) const {
    require(model_id >= 1 && model_id <= static_cast<int>(per_model_coefficients.size()),
            "AvrcFit: model id out of range");
    return per_model_coefficients[static_cast<std::size_t>(model_id - 1)];
  }
  int model_count() const { return static_cast<int>(per_model_coefficients.size()); }
};

inline ClusterMembers sorted_members(ClusterMembers members) {
  std::sort(members.begin(), members.end());
  return members;
}

/**
 * Aggregate problem of one cluster: the member designs concatenated
 * column-wise in ascending model-id order, and the sum of their responses.
 */
inline std::pair<Matrix, Vector> aggregate_design(const ModelCollection& collection,
                                                  const ClusterMembers& cluster) {
  require(!cluster.empty(), "aggregate_design: empty cluster");
  const ClusterMembers members = sorted_members(cluster);
  for (std::size_t i = 1; i < members.size(); ++i) {
    require(members[i] != members[i - 1], "aggregate_design: duplicate model id");
  }
  const Eigen::Index n = collection.n();
  const Eigen::Index p = collection.p();
  Matrix design(n, p * static_cast<Eigen::Index>(members.size()));
  Vector response = Vector::Zero(n);
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& pr = collection.problem(members[i]);
    design.middleCols(static_cast<Eigen::Index>(i) * p, p) = pr.design;
    response += pr.response;
  }
  return {std::move(design), std::move(response)};
}

inline ClusterFit fit_cluster(const ModelCollection& collection, const ClusterMembers& cluster) {
  auto [design, response] = aggregate_design(collection, cluster);
  LeastSquaresFit ls = ridgeless_fit(design, response);
  return ClusterFit{sorted_members(cluster), std::move(ls.coefficients), ls.rank};
}

/// Memo of cluster fits keyed by member set. Not thread-safe; fit_avrc fills
/// it from a single thread after computing missing entries in parallel.
class ClusterFitCache {
 public:
  const ClusterFit* find(const ClusterMembers& members) const {
    auto it = fits_.find(members);
    return it == fits_.end() ? nullptr : &it->second;
  }
  const ClusterFit& insert(ClusterFit fit) {
    auto key = fit.members;
    return fits_.insert_or_assign(std::move(key), std::move(fit)).first->second;
  }
  std::size_t size() const { return fits_.size(); }

 private:
  std::map<ClusterMembers, ClusterFit> fits_;
};

/**
 * Fits every cluster of `partition` and splits the stacked coefficients
 * back to the member models. Cluster fits are independent and may run on
 * several threads; results do not depend on the thread count.
 */
inline AvrcFit fit_avrc(const ModelCollection& collection, const ClusterPartition& partition,
                        unsigned threads = 1, ClusterFitCache* cache = nullptr) {
  require(partition.model_count() == collection.size(),
          "fit_avrc: partition does not match the collection");
  const auto& clusters = partition.clusters();
  std::vector<ClusterFit> fresh(clusters.size());
  std::vector<const ClusterFit*> resolved(clusters.size(), nullptr);
  std::vector<std::size_t> missing;
  for (std::size_t j = 0; j < clusters.size(); ++j) {
    if (cache != nullptr) resolved[j] = cache->find(clusters[j]);
    if (resolved[j] == nullptr) missing.push_back(j);
  }
  parallel_for(missing.size(), threads, [&](std::size_t i) {
    const std::size_t j = missing[i];
    fresh[j] = fit_cluster(collection, clusters[j]);
  });
  for (std::size_t j : missing) {
    resolved[j] = cache != nullptr ? &cache->insert(std::move(fresh[j])) : &fresh[j];
  }

  AvrcFit out;
  out.partition = partition;
  out.per_model_coefficients.resize(static_cast<std::size_t>(collection.size()));
  out.per_cluster_rank.resize(clusters.size());
  const Eigen::Index p = collection.p();
  for (std::size_t j = 0; j < clusters.size(); ++j) {
    const ClusterFit& cf = *resolved[j];
    out.per_cluster_rank[j] = cf.rank;
    for (std::size_t i = 0; i < cf.members.size(); ++i) {
      out.per_model_coefficients[static_cast<std::size_t>(cf.members[i] - 1)] =
          cf.coefficients.segment(static_cast<Eigen::Index>(i) * p, p);
    }
  }
  return out;
}

/// Sum over models of new_designs[m] * beta_m; new_designs indexed by id - 1.
inline Vector predict_aggregate(const AvrcFit& fit, std::span<const Matrix> new_designs) {
  if (static_cast<int>(new_designs.size()) != fit.model_count()) {
    throw ContractViolation("predict_aggregate: expected " + std::to_string(fit.model_count()) +
                            " designs, got " + std::to_string(new_designs.size()));
  }
  const Eigen::Index rows = new_designs.front().rows();
  Vector total = Vector::Zero(rows);
  for (std::size_t m = 0; m < new_designs.size(); ++m) {
    const Matrix& x = new_designs[m];
    const Vector& beta = fit.per_model_coefficients[m];
    require(x.rows() == rows, "predict_aggregate: designs have unequal row counts");
    require(x.cols() == beta.size(),
            "predict_aggregate: model " + std::to_string(m + 1) + " has wrong column count");
    total.noalias() += x * beta;
  }
  return total;
}

/// Aggregate in-sample prediction: sum of X_m beta_m over the training designs.
inline Vector fitted_aggregate(const ModelCollection& collection, const AvrcFit& fit) {
  require(fit.model_count() == collection.size(), "fit does not match collection");
  Vector total = Vector::Zero(collection.n());
  for (const auto& pr : collection.problems()) {
    total.noalias() += pr.design * fit.coefficients(pr.model_id);
  }
  return total;
}

/// |sum_m y_m - sum_m X_m beta_m|^2 (a sum of squares, not a mean).
inline double aggregate_training_error(const ModelCollection& collection, const AvrcFit& fit) {
  return (collection.aggregate_response() - fitted_aggregate(collection, fit)).squaredNorm();
}

/// |sum_m z_m - predict_aggregate(fit, new_designs)|^2.
inline double aggregate_test_error(const AvrcFit& fit, std::span<const Matrix> new_designs,
                                   std::span<const Vector> new_responses) {
  require(new_responses.size() == new_designs.size(),
          "aggregate_test_error: designs and responses differ in count");
  const Vector prediction = predict_aggregate(fit, new_designs);
  Vector target = Vector::Zero(prediction.size());
  for (const auto& z : new_responses) {
    require(z.size() == prediction.size(), "aggregate_test_error: response length mismatch");
    target += z;
  }
  return (target - prediction).squaredNorm();
}

/// Individual-regression residuals y_m - X_m beta_m, indexed by id - 1.
inline std::vector<Vector> residual_vectors(const ModelCollection& collection) {
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(collection.size()));
  for (const auto& pr : collection.problems()) {
    const LeastSquaresFit ls = ridgeless_fit(pr.design, pr.response);
    out.push_back(pr.response - pr.design * ls.coefficients);
  }
  return out;
}

}  // namespace avrc
