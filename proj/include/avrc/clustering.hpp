#pragma once

// Agglomerative clustering of regression models.
//
//  * TEM: greedy merging of the cluster pair whose merge gives the smallest
//    total aggregate training error.
//  * RCM: Ward linkage on 1 - r_ij, with r_ij the correlation between the
//    individual-regression residuals of models i and j.
//
// Cluster ids follow the usual dendrogram convention: leaves are 1..M and
// the cluster created at step s gets id M + s.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "avrc/errors.hpp"
#include "avrc/linalg.hpp"
#include "avrc/model.hpp"
#include "avrc/parallel.hpp"

namespace avrc {

enum class ClusteringMethod { kTem, kRcm };

inline const char* to_string(ClusteringMethod m) {
  return m == ClusteringMethod::kTem ? "tem" : "rcm";
}

struct MergeStep {
  int step_index = 0;  // 1..M-1
  int left = 0;        // cluster id with the smaller minimum member
  int right = 0;
  int new_cluster = 0;
  ClusterMembers left_members;
  ClusterMembers right_members;
  std::optional<double> training_error_after;  // aggregate RSS after the merge
  std::optional<double> linkage_height;        // RCM only
};

struct MergeTrace {
  int model_count = 0;
  ClusteringMethod method = ClusteringMethod::kTem;
  std::vector<MergeStep> steps;
  std::vector<std::string> warnings;
};

namespace detail {

inline ClusterMembers merge_members(const ClusterMembers& a, const ClusterMembers& b) {
  ClusterMembers out;
  out.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

// Replays merges, checking every structural invariant along the way.
inline std::map<int, ClusterMembers> replay(const MergeTrace& trace, std::size_t merges) {
  require(trace.model_count >= 1, "MergeTrace: model count must be positive");
  require(merges <= trace.steps.size(), "MergeTrace: not enough recorded steps");
  std::map<int, ClusterMembers> active;
  for (int m = 1; m <= trace.model_count; ++m) active[m] = {m};
  std::set<int> used;
  for (int m = 1; m <= trace.model_count; ++m) used.insert(m);
  for (std::size_t s = 0; s < merges; ++s) {
    const MergeStep& st = trace.steps[s];
    require(st.left != st.right, "MergeTrace: step merges a cluster with itself");
    auto l = active.find(st.left);
    auto r = active.find(st.right);
    require(l != active.end() && r != active.end(),
            "MergeTrace: step " + std::to_string(st.step_index) + " merges an inactive cluster");
    require(used.insert(st.new_cluster).second,
            "MergeTrace: step " + std::to_string(st.step_index) + " reuses a cluster id");
    ClusterMembers merged = merge_members(l->second, r->second);
    active.erase(l);
    active.erase(st.right);
    active[st.new_cluster] = std::move(merged);
  }
  return active;
}

}  // namespace detail

/// Partition obtained after M - k merges; clusters ordered by smallest member.
inline ClusterPartition partition_at(const MergeTrace& trace, int k) {
  if (k < 1 || k > trace.model_count) {
    throw ContractViolation("partition_at: k = " + std::to_string(k) + " outside 1.." +
                            std::to_string(trace.model_count));
  }
  const auto active = detail::replay(trace, static_cast<std::size_t>(trace.model_count - k));
  std::vector<ClusterMembers> clusters;
  for (const auto& [id, members] : active) clusters.push_back(members);
  std::sort(clusters.begin(), clusters.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return ClusterPartition(std::move(clusters), trace.model_count);
}

/// Throws ContractViolation unless the trace replays to a single cluster.
inline void validate_trace(const MergeTrace& trace) {
  require(static_cast<int>(trace.steps.size()) == trace.model_count - 1,
          "MergeTrace: expected M-1 steps");
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    require(trace.steps[s].step_index == static_cast<int>(s) + 1,
            "MergeTrace: steps out of order");
  }
  require(detail::replay(trace, trace.steps.size()).size() == 1,
          "MergeTrace: replay does not end in a single cluster");
}

/// Symmetric dissimilarities with zero diagonal.
class DissimilarityMatrix {
 public:
  explicit DissimilarityMatrix(Matrix d) : d_(std::move(d)) {
    require(d_.rows() == d_.cols() && d_.rows() >= 1, "DissimilarityMatrix: must be square");
    if (!d_.allFinite()) throw InvalidData("DissimilarityMatrix: NaN or Inf entry");
    const double tol = 1e-12 * problem_scale(d_);
    for (Eigen::Index i = 0; i < d_.rows(); ++i) {
      require(std::abs(d_(i, i)) <= tol, "DissimilarityMatrix: nonzero diagonal");
      for (Eigen::Index j = 0; j < i; ++j) {
        require(std::abs(d_(i, j) - d_(j, i)) <= tol, "DissimilarityMatrix: not symmetric");
      }
    }
  }
  Eigen::Index size() const { return d_.rows(); }
  const Matrix& matrix() const { return d_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return d_(i, j); }

 private:
  Matrix d_;
};

/**
 * Pearson correlations between residual vectors. A vector with (numerically)
 * zero variance gets correlation 0 with everything, including itself, and a
 * warning is appended.
 */
inline Matrix residual_correlation(std::span<const Vector> residuals,
                                   std::vector<std::string>* warnings = nullptr) {
  require(!residuals.empty(), "residual_correlation: no residuals");
  const Eigen::Index n = residuals.front().size();
  require(n >= 2, "residual_correlation: need at least two observations");
  const auto m = static_cast<Eigen::Index>(residuals.size());
  double scale = 1.0;
  for (const auto& r : residuals) {
    require(r.size() == n, "residual_correlation: residual lengths differ");
    if (!r.allFinite()) throw InvalidData("residual_correlation: NaN or Inf residual");
    scale = std::max(scale, problem_scale(r));
  }
  Matrix centered(n, m);
  Vector norms(m);
  std::vector<bool> degenerate(static_cast<std::size_t>(m), false);
  const double zero_tol = 1e-10 * scale * std::sqrt(static_cast<double>(n));
  for (Eigen::Index j = 0; j < m; ++j) {
    const Vector& r = residuals[static_cast<std::size_t>(j)];
    centered.col(j) = r.array() - r.mean();
    norms(j) = centered.col(j).norm();
    if (norms(j) <= zero_tol) {
      degenerate[static_cast<std::size_t>(j)] = true;
      if (warnings != nullptr) {
        warnings->push_back("model " + std::to_string(j + 1) +
                            " has zero-variance residuals; its correlations are set to 0");
      }
    }
  }
  Matrix corr = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (degenerate[static_cast<std::size_t>(i)]) continue;
    corr(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      if (degenerate[static_cast<std::size_t>(j)]) continue;
      const double r = centered.col(i).dot(centered.col(j)) / (norms(i) * norms(j));
      corr(i, j) = corr(j, i) = std::clamp(r, -1.0, 1.0);
    }
  }
  return corr;
}

/// d_ij = 1 - r_ij with an exact zero diagonal.
inline DissimilarityMatrix correlation_dissimilarity(const Matrix& correlation) {
  Matrix d = (1.0 - correlation.array()).matrix();
  d.diagonal().setZero();
  return DissimilarityMatrix(std::move(d));
}

/// How input dissimilarities enter the Lance-Williams recursion.
/// kWardD treats them as squared distances (R's "ward.D"); kWardD2 squares
/// them first and reports square-rooted heights ("ward.D2").
enum class WardConvention { kWardD, kWardD2 };

/**
 * Ward agglomeration with Lance-Williams updates. Returns merge order and
 * heights; training errors are left empty. Ties go to the lexicographically
 * smallest (min member of left, min member of right).
 */
inline MergeTrace ward_linkage(const DissimilarityMatrix& dissimilarity,
                               WardConvention convention = WardConvention::kWardD) {
  const Eigen::Index m = dissimilarity.size();
  MergeTrace trace;
  trace.model_count = static_cast<int>(m);
  trace.method = ClusteringMethod::kRcm;

  Matrix d = dissimilarity.matrix();
  if (convention == WardConvention::kWardD2) d = d.array().square().matrix();

  struct Slot {
    int id;
    ClusterMembers members;
  };
  std::vector<Slot> slots;
  for (Eigen::Index i = 0; i < m; ++i) slots.push_back({static_cast<int>(i) + 1, {static_cast<int>(i) + 1}});
  std::vector<bool> alive(static_cast<std::size_t>(m), true);

  for (int step = 1; step < m; ++step) {
    // Slots keep ascending min-member order, so scanning i < j visits pairs
    // in tie-break order and a strict comparison keeps the first minimum.
    Eigen::Index bi = -1, bj = -1;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!alive[static_cast<std::size_t>(i)]) continue;
      for (Eigen::Index j = i + 1; j < m; ++j) {
        if (!alive[static_cast<std::size_t>(j)]) continue;
        if (bi < 0 || d(i, j) < best) {
          best = d(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    auto& left = slots[static_cast<std::size_t>(bi)];
    auto& right = slots[static_cast<std::size_t>(bj)];
    const double ni = static_cast<double>(left.members.size());
    const double nj = static_cast<double>(right.members.size());
    for (Eigen::Index k = 0; k < m; ++k) {
      if (!alive[static_cast<std::size_t>(k)] || k == bi || k == bj) continue;
      const double nk = static_cast<double>(slots[static_cast<std::size_t>(k)].members.size());
      const double updated =
          ((ni + nk) * d(k, bi) + (nj + nk) * d(k, bj) - nk * d(bi, bj)) / (ni + nj + nk);
      d(k, bi) = d(bi, k) = updated;
    }

    MergeStep st;
    st.step_index = step;
    st.left = left.id;
    st.right = right.id;
    st.new_cluster = static_cast<int>(m) + step;
    st.left_members = left.members;
    st.right_members = right.members;
    st.linkage_height = convention == WardConvention::kWardD2 ? std::sqrt(std::max(0.0, best)) : best;
    trace.steps.push_back(st);

    left.id = st.new_cluster;
    left.members = detail::merge_members(left.members, right.members);
    alive[static_cast<std::size_t>(bj)] = false;
  }
  return trace;
}

/**
 * Fills training_error_after for the requested cluster counts k (all when
 * `ks` is empty). Each value is aggregate_training_error of fit_avrc at
 * partition_at(k).
 */
inline void fill_training_errors(MergeTrace& trace, const ModelCollection& collection,
                                 std::span<const int> ks = {}, unsigned threads = 1,
                                 ClusterFitCache* cache = nullptr) {
  require(trace.model_count == collection.size(), "trace does not match collection");
  ClusterFitCache local;
  ClusterFitCache& fits = cache != nullptr ? *cache : local;
  std::vector<int> wanted(ks.begin(), ks.end());
  if (wanted.empty()) {
    for (int k = trace.model_count - 1; k >= 1; --k) wanted.push_back(k);
  }
  for (int k : wanted) {
    if (k == trace.model_count) continue;  // no step corresponds to the singleton level
    const ClusterPartition part = partition_at(trace, k);
    const AvrcFit fit = fit_avrc(collection, part, threads, &fits);
    trace.steps[static_cast<std::size_t>(trace.model_count - k - 1)].training_error_after =
        aggregate_training_error(collection, fit);
  }
}

struct RcmOptions {
  WardConvention convention = WardConvention::kWardD;
  bool fill_errors = true;
  unsigned threads = 1;
};

/// Residual Correlation Matrix clustering. Residuals come from individual
/// regression once, before any merge.
inline MergeTrace rcm_cluster(const ModelCollection& collection, const RcmOptions& options = {},
                              ClusterFitCache* cache = nullptr) {
  require(collection.size() >= 2, "rcm_cluster: need at least two models");
  std::vector<std::string> warnings;
  const std::vector<Vector> residuals = residual_vectors(collection);
  const Matrix corr = residual_correlation(residuals, &warnings);
  MergeTrace trace = ward_linkage(correlation_dissimilarity(corr), options.convention);
  trace.warnings = std::move(warnings);
  if (options.fill_errors) fill_training_errors(trace, collection, {}, options.threads, cache);
  return trace;
}

namespace detail {

// Fast residuals of merged clusters for TEM scoring. Cross Gram blocks
// X_i^T X_j and X_i^T y_j are computed once, so a candidate merge assembles
// its normal equations without touching the n-row designs. Candidates that
// are wide or poorly conditioned fall back to the ridgeless SVD solve.
class MergeScorer {
 public:
  explicit MergeScorer(const ModelCollection& collection) : collection_(collection) {
    const int m = collection.size();
    const auto mm = static_cast<std::size_t>(m);
    gram_.resize(mm * mm);
    cross_.resize(mm * mm);
    for (int i = 1; i <= m; ++i) {
      const Matrix& xi = collection.problem(i).design;
      for (int j = 1; j <= m; ++j) {
        const auto& pj = collection.problem(j);
        gram_[index(i, j)] = xi.transpose() * pj.design;
        cross_[index(i, j)] = xi.transpose() * pj.response;
      }
    }
  }

  /// Residual of the joint fit of `members` (sorted).
  Vector residual(const ClusterMembers& members) const {
    const Eigen::Index p = collection_.p();
    const Eigen::Index n = collection_.n();
    const auto k = static_cast<Eigen::Index>(members.size());
    const Eigen::Index cols = p * k;
    if (cols < n) {
      Matrix g(cols, cols);
      Vector b = Vector::Zero(cols);
      for (Eigen::Index a = 0; a < k; ++a) {
        const int ia = members[static_cast<std::size_t>(a)];
        for (Eigen::Index c = 0; c < k; ++c) {
          const int ic = members[static_cast<std::size_t>(c)];
          g.block(a * p, c * p, p, p) = gram_[index(ia, ic)];
          b.segment(a * p, p) += cross_[index(ia, ic)];
        }
      }
      Eigen::LLT<Matrix> llt(g);
      if (llt.info() == Eigen::Success) {
        const auto diag = llt.matrixLLT().diagonal();
        if (diag.minCoeff() > kConditionFloor * diag.maxCoeff()) {
          const Vector beta = llt.solve(b);
          Vector r = Vector::Zero(n);
          for (Eigen::Index a = 0; a < k; ++a) {
            const auto& pr = collection_.problem(members[static_cast<std::size_t>(a)]);
            r += pr.response;
            r.noalias() -= pr.design * beta.segment(a * p, p);
          }
          return r;
        }
      }
    }
    auto [design, response] = aggregate_design(collection_, members);
    const LeastSquaresFit ls = ridgeless_fit(design, response);
    return response - design * ls.coefficients;
  }

 private:
  // Ratio of Cholesky diagonal entries; roughly 1/cond(X).
  static constexpr double kConditionFloor = 1e-5;

  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i - 1) * static_cast<std::size_t>(collection_.size()) +
           static_cast<std::size_t>(j - 1);
  }

  const ModelCollection& collection_;
  std::vector<Matrix> gram_;
  std::vector<Vector> cross_;
};

}  // namespace detail

struct TemOptions {
  unsigned threads = 1;
  /// Reuse a candidate pair's merged fit across steps while both clusters
  /// survive. Disabling it recomputes every pair at every step.
  bool memoize = true;
};

/**
 * Training Error Minimisation. At each step every surviving pair (A, B) is
 * scored by the total aggregate training error of the partition obtained by
 * merging them, |R - r_A - r_B + r_AB|^2 with R the summed residual of all
 * current clusters. The minimiser is merged; ties go to the
 * lexicographically smallest (min member of A, min member of B).
 *
 * training_error_after is recomputed through fit_avrc on the new partition,
 * so it equals aggregate_training_error(fit_avrc(collection, partition_at(k))).
 */
inline MergeTrace tem_cluster(const ModelCollection& collection, const TemOptions& options = {},
                              ClusterFitCache* cache = nullptr) {
  const int m = collection.size();
  require(m >= 2, "tem_cluster: need at least two models");
  MergeTrace trace;
  trace.model_count = m;
  trace.method = ClusteringMethod::kTem;

  ClusterFitCache local;
  ClusterFitCache& fits = cache != nullptr ? *cache : local;
  const detail::MergeScorer scorer(collection);

  struct Active {
    int id;
    ClusterMembers members;
    Vector residual;
  };
  std::vector<Active> active;  // ascending by smallest member
  for (int i = 1; i <= m; ++i) active.push_back({i, {i}, scorer.residual({i})});

  std::map<std::pair<int, int>, Vector> merged;  // keyed by (left id, right id)
  const double inf = std::numeric_limits<double>::infinity();

  for (int step = 1; step < m; ++step) {
    Vector total = Vector::Zero(collection.n());
    for (const auto& a : active) total += a.residual;

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < active.size(); ++i) {
      for (std::size_t j = i + 1; j < active.size(); ++j) pairs.emplace_back(i, j);
    }
    std::vector<std::size_t> todo;
    for (std::size_t q = 0; q < pairs.size(); ++q) {
      const auto key = std::make_pair(active[pairs[q].first].id, active[pairs[q].second].id);
      if (!options.memoize || !merged.contains(key)) todo.push_back(q);
    }
    std::vector<std::optional<Vector>> computed(todo.size());
    std::vector<std::string> failures(todo.size());
    parallel_for(todo.size(), options.threads, [&](std::size_t t) {
      const auto [i, j] = pairs[todo[t]];
      try {
        computed[t] = scorer.residual(detail::merge_members(active[i].members, active[j].members));
      } catch (const Error& e) {
        failures[t] = e.what();
      }
    });
    if (!options.memoize) merged.clear();
    for (std::size_t t = 0; t < todo.size(); ++t) {
      const auto [i, j] = pairs[todo[t]];
      if (computed[t]) {
        merged[{active[i].id, active[j].id}] = std::move(*computed[t]);
      } else {
        trace.warnings.push_back("step " + std::to_string(step) + ": skipped pair (" +
                                 std::to_string(active[i].id) + ", " +
                                 std::to_string(active[j].id) + "): " + failures[t]);
      }
    }

    std::vector<double> scores(pairs.size(), inf);
    parallel_for(pairs.size(), options.threads, [&](std::size_t q) {
      const auto [i, j] = pairs[q];
      auto it = merged.find({active[i].id, active[j].id});
      if (it == merged.end()) return;
      scores[q] = (total - active[i].residual - active[j].residual + it->second).squaredNorm();
    });
    std::size_t best = pairs.size();
    for (std::size_t q = 0; q < pairs.size(); ++q) {
      if (scores[q] < inf && (best == pairs.size() || scores[q] < scores[best])) best = q;
    }
    if (best == pairs.size()) {
      throw NumericalFailure("tem_cluster: every candidate merge failed at step " +
                             std::to_string(step));
    }

    const auto [bi, bj] = pairs[best];
    MergeStep st;
    st.step_index = step;
    st.left = active[bi].id;
    st.right = active[bj].id;
    st.new_cluster = m + step;
    st.left_members = active[bi].members;
    st.right_members = active[bj].members;

    Active next{st.new_cluster, detail::merge_members(st.left_members, st.right_members),
                std::move(merged[{st.left, st.right}])};
    std::erase_if(merged, [&](const auto& kv) {
      return kv.first.first == st.left || kv.first.second == st.left ||
             kv.first.first == st.right || kv.first.second == st.right;
    });
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(bj));
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(bi));
    auto pos = std::lower_bound(active.begin(), active.end(), next.members.front(),
                                [](const Active& a, int v) { return a.members.front() < v; });
    active.insert(pos, std::move(next));

    std::vector<ClusterMembers> clusters;
    for (const auto& a : active) clusters.push_back(a.members);
    const AvrcFit fit =
        fit_avrc(collection, ClusterPartition(std::move(clusters), m), options.threads, &fits);
    st.training_error_after = aggregate_training_error(collection, fit);
    trace.steps.push_back(std::move(st));
  }
  return trace;
}

}  // namespace avrc
