#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "avrc/clustering.hpp"
#include "avrc/synth.hpp"
#include "support.hpp"

using namespace avrc;
using avrc::testing::correlated_collection;
using avrc::testing::gaussian_matrix;
using avrc::testing::gaussian_vector;
using avrc::testing::random_collection;

namespace {

double total_error(const ModelCollection& c, const std::vector<ClusterMembers>& clusters) {
  return aggregate_training_error(c, fit_avrc(c, ClusterPartition(clusters, c.size())));
}

// Adjusted Rand index between two labelings.
double adjusted_rand(const std::vector<int>& a, const std::vector<std::size_t>& b) {
  std::map<std::pair<int, std::size_t>, double> joint;
  std::map<int, double> ra;
  std::map<std::size_t, double> rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double sj = 0, sa = 0, sb = 0;
  for (const auto& [k, v] : joint) sj += c2(v);
  for (const auto& [k, v] : ra) sa += c2(v);
  for (const auto& [k, v] : rb) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(a.size()));
  return (sj - expected) / (0.5 * (sa + sb) - expected);
}

// Ward on points in R^d: merge cost 2 n_i n_j / (n_i + n_j) |c_i - c_j|^2,
// which is what the Lance-Williams recursion on squared distances yields.
struct CentroidWardStep {
  ClusterMembers left, right;
  double height;
};

std::vector<CentroidWardStep> centroid_ward(const Matrix& points) {
  struct C {
    ClusterMembers members;
    Vector centroid;
  };
  std::vector<C> active;
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    active.push_back({{static_cast<int>(i) + 1}, points.row(i).transpose()});
  std::vector<CentroidWardStep> out;
  while (active.size() > 1) {
    double best = INFINITY;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < active.size(); ++i) {
      for (std::size_t j = i + 1; j < active.size(); ++j) {
        const double ni = static_cast<double>(active[i].members.size());
        const double nj = static_cast<double>(active[j].members.size());
        const double cost =
            2.0 * ni * nj / (ni + nj) * (active[i].centroid - active[j].centroid).squaredNorm();
        if (cost < best) {
          best = cost;
          bi = i;
          bj = j;
        }
      }
    }
    C& a = active[bi];
    C& b = active[bj];
    const double na = static_cast<double>(a.members.size());
    const double nb = static_cast<double>(b.members.size());
    CentroidWardStep st{a.members, b.members, best};
    if (st.left.front() > st.right.front()) std::swap(st.left, st.right);
    out.push_back(st);
    C merged{detail::merge_members(a.members, b.members), (na * a.centroid + nb * b.centroid) / (na + nb)};
    active.erase(active.begin() + static_cast<long>(bj));
    active[bi] = merged;
  }
  return out;
}

}  // namespace

TEST(PartitionAt, Endpoints) {
  Rng rng(1);
  const ModelCollection c = random_collection(rng, 5, 12, 2);
  const MergeTrace t = tem_cluster(c);
  EXPECT_EQ(partition_at(t, 5).size(), 5u);
  EXPECT_EQ(partition_at(t, 1).clusters().front(), (ClusterMembers{1, 2, 3, 4, 5}));
  const ClusterPartition p4 = partition_at(t, 4);
  EXPECT_EQ(p4.size(), 4u);
  const ClusterMembers first = detail::merge_members(t.steps[0].left_members, t.steps[0].right_members);
  EXPECT_NE(std::find(p4.clusters().begin(), p4.clusters().end(), first), p4.clusters().end());
  EXPECT_THROW(partition_at(t, 0), ContractViolation);
  EXPECT_THROW(partition_at(t, 6), ContractViolation);
}

TEST(MergeTrace, ValidationCatchesBrokenReplays) {
  MergeTrace t;
  t.model_count = 3;
  t.steps.push_back({1, 1, 2, 4, {1}, {2}, std::nullopt, std::nullopt});
  t.steps.push_back({2, 4, 4, 5, {1, 2}, {1, 2}, std::nullopt, std::nullopt});
  EXPECT_THROW(validate_trace(t), ContractViolation);
  t.steps[1] = {2, 1, 3, 5, {1}, {3}, std::nullopt, std::nullopt};
  EXPECT_THROW(validate_trace(t), ContractViolation);
  t.steps[1] = {2, 4, 3, 5, {1, 2}, {3}, std::nullopt, std::nullopt};
  EXPECT_NO_THROW(validate_trace(t));
}

TEST(Tem, TwoModelsForcedMerge) {
  Rng rng(2);
  const ModelCollection c = random_collection(rng, 2, 15, 3);
  const MergeTrace t = tem_cluster(c);
  ASSERT_EQ(t.steps.size(), 1u);
  EXPECT_EQ(t.steps[0].left_members, ClusterMembers{1});
  EXPECT_EQ(t.steps[0].right_members, ClusterMembers{2});
  EXPECT_EQ(t.steps[0].new_cluster, 3);
  EXPECT_FALSE(t.steps[0].linkage_height.has_value());
  EXPECT_LE(*t.steps[0].training_error_after, total_error(c, {{1}, {2}}) + 1e-9);
}

TEST(Tem, FirstMergeMatchesExhaustivePairs) {
  Rng rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const ModelCollection c = correlated_collection(rng, 3, 20, 2);
    const std::vector<std::vector<ClusterMembers>> cand{
        {{1, 2}, {3}}, {{1, 3}, {2}}, {{1}, {2, 3}}};
    const std::vector<std::pair<int, int>> pairs{{1, 2}, {1, 3}, {2, 3}};
    std::size_t best = 0;
    double best_err = INFINITY;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      const double e = total_error(c, cand[i]);
      if (e < best_err) {
        best_err = e;
        best = i;
      }
    }
    const MergeTrace t = tem_cluster(c);
    EXPECT_EQ(t.steps[0].left_members.front(), pairs[best].first);
    EXPECT_EQ(t.steps[0].right_members.front(), pairs[best].second);
    EXPECT_NEAR(*t.steps[0].training_error_after, best_err, 1e-10 * best_err);
  }
}

TEST(Tem, GreedyOptimalAtEveryStep) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    const int m = 4 + static_cast<int>(seed % 3);
    const ModelCollection c = correlated_collection(rng, m, 18, 2);
    const MergeTrace t = tem_cluster(c);
    for (std::size_t s = 0; s < t.steps.size(); ++s) {
      const auto clusters = partition_at(t, m - static_cast<int>(s)).clusters();
      double best = INFINITY;
      for (std::size_t i = 0; i < clusters.size(); ++i) {
        for (std::size_t j = i + 1; j < clusters.size(); ++j) {
          std::vector<ClusterMembers> merged;
          for (std::size_t k = 0; k < clusters.size(); ++k)
            if (k != i && k != j) merged.push_back(clusters[k]);
          merged.push_back(detail::merge_members(clusters[i], clusters[j]));
          best = std::min(best, total_error(c, merged));
        }
      }
      EXPECT_LE(*t.steps[s].training_error_after, best * (1 + 1e-9) + 1e-12)
          << "seed " << seed << " step " << s + 1;
    }
  }
}

TEST(Tem, RecordedErrorsEqualRecomputation) {
  Rng rng(4);
  const ModelCollection c = correlated_collection(rng, 7, 25, 2);
  const MergeTrace t = tem_cluster(c);
  for (std::size_t s = 0; s < t.steps.size(); ++s) {
    const int k = c.size() - static_cast<int>(s) - 1;
    EXPECT_EQ(*t.steps[s].training_error_after,
              aggregate_training_error(c, fit_avrc(c, partition_at(t, k))));
  }
}

TEST(Tem, MemoizationAndThreadsDoNotChangeTrace) {
  Rng rng(5);
  const ModelCollection c = correlated_collection(rng, 9, 30, 3);
  TemOptions plain;
  plain.memoize = false;
  TemOptions threaded;
  threaded.threads = 4;
  const MergeTrace a = tem_cluster(c);
  const MergeTrace b = tem_cluster(c, plain);
  const MergeTrace d = tem_cluster(c, threaded);
  for (const MergeTrace* other : {&b, &d}) {
    ASSERT_EQ(a.steps.size(), other->steps.size());
    for (std::size_t s = 0; s < a.steps.size(); ++s) {
      EXPECT_EQ(a.steps[s].left_members, other->steps[s].left_members);
      EXPECT_EQ(a.steps[s].right_members, other->steps[s].right_members);
      EXPECT_EQ(a.steps[s].new_cluster, other->steps[s].new_cluster);
      EXPECT_EQ(*a.steps[s].training_error_after, *other->steps[s].training_error_after);
    }
  }
}

TEST(Tem, ExactTiesGoToSmallestIds) {
  Rng rng(6);
  const Matrix x = gaussian_matrix(rng, 12, 2);
  const Vector y = gaussian_vector(rng, 12);
  const ModelCollection c({{x, y, 1}, {x, y, 2}, {x, y, 3}, {x, y, 4}});
  const MergeTrace t = tem_cluster(c);
  EXPECT_EQ(t.steps[0].left_members, ClusterMembers{1});
  EXPECT_EQ(t.steps[0].right_members, ClusterMembers{2});
  EXPECT_EQ(t.steps[0].new_cluster, 5);
}

TEST(Tem, TraceIsStructurallyValid) {
  Rng rng(7);
  const ModelCollection c = random_collection(rng, 8, 20, 2);
  const MergeTrace t = tem_cluster(c);
  EXPECT_NO_THROW(validate_trace(t));
  for (int k = 1; k <= 8; ++k) EXPECT_EQ(partition_at(t, k).size(), static_cast<std::size_t>(k));
  for (std::size_t s = 0; s < t.steps.size(); ++s) {
    EXPECT_EQ(t.steps[s].new_cluster, 8 + static_cast<int>(s) + 1);
    EXPECT_LT(t.steps[s].left_members.front(), t.steps[s].right_members.front());
  }
}

TEST(ResidualCorrelation, ScaledAndNegatedCopies) {
  Rng rng(8);
  const Vector r = gaussian_vector(rng, 20);
  const std::vector<Vector> res{r, 2.0 * r, -r};
  const Matrix corr = residual_correlation(res);
  EXPECT_NEAR(corr(0, 1), 1.0, 1e-14);
  EXPECT_NEAR(corr(0, 2), -1.0, 1e-14);
  EXPECT_EQ(corr(1, 1), 1.0);
}

TEST(ResidualCorrelation, MatchesTextbookFormula) {
  Rng rng(9);
  std::vector<Vector> res;
  for (int i = 0; i < 3; ++i) res.push_back(gaussian_vector(rng, 20) + 0.5 * i * Vector::Ones(20));
  res[2] += 0.8 * res[0];
  const Matrix corr = residual_correlation(res);
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      const Vector& x = res[a];
      const Vector& y = res[b];
      const double n = 20;
      const double sx = x.sum(), sy = y.sum();
      const double r = (n * x.dot(y) - sx * sy) /
                       std::sqrt((n * x.squaredNorm() - sx * sx) * (n * y.squaredNorm() - sy * sy));
      EXPECT_NEAR(corr(a, b), r, 1e-12);
    }
  }
}

TEST(ResidualCorrelation, ZeroVarianceWarnsAndZeroes) {
  Rng rng(10);
  const std::vector<Vector> res{gaussian_vector(rng, 10), Vector::Constant(10, 3.0),
                                gaussian_vector(rng, 10)};
  std::vector<std::string> warnings;
  const Matrix corr = residual_correlation(res, &warnings);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_EQ(corr.row(1).cwiseAbs().sum(), 0.0);
  EXPECT_EQ(corr.col(1).cwiseAbs().sum(), 0.0);
  EXPECT_EQ(correlation_dissimilarity(corr)(0, 1), 1.0);
}

TEST(WardLinkage, ThreePointHand) {
  Matrix d(3, 3);
  d << 0, 1, 4, 1, 0, 4, 4, 4, 0;
  const MergeTrace t = ward_linkage(DissimilarityMatrix(d));
  ASSERT_EQ(t.steps.size(), 2u);
  EXPECT_EQ(t.steps[0].left_members, ClusterMembers{1});
  EXPECT_EQ(t.steps[0].right_members, ClusterMembers{2});
  EXPECT_DOUBLE_EQ(*t.steps[0].linkage_height, 1.0);
  // (2*4 + 2*4 - 1) / 3
  EXPECT_DOUBLE_EQ(*t.steps[1].linkage_height, 5.0);
}

TEST(WardLinkage, FourPointHandLanceWilliams) {
  Matrix d(4, 4);
  d << 0, 1, 6, 8,  //
      1, 0, 5, 7,   //
      6, 5, 0, 2,   //
      8, 7, 2, 0;
  const MergeTrace t = ward_linkage(DissimilarityMatrix(d));
  ASSERT_EQ(t.steps.size(), 3u);
  EXPECT_EQ(t.steps[0].left, 1);
  EXPECT_EQ(t.steps[0].right, 2);
  EXPECT_DOUBLE_EQ(*t.steps[0].linkage_height, 1.0);
  EXPECT_EQ(t.steps[1].left, 3);
  EXPECT_EQ(t.steps[1].right, 4);
  EXPECT_DOUBLE_EQ(*t.steps[1].linkage_height, 2.0);
  EXPECT_EQ(t.steps[2].left, 5);
  EXPECT_EQ(t.steps[2].right, 6);
  // d(5,3) = 7, d(5,4) = 29/3, then (3*7 + 3*29/3 - 2*2) / 4.
  EXPECT_NEAR(*t.steps[2].linkage_height, 11.5, 1e-12);

  const MergeTrace t2 = ward_linkage(DissimilarityMatrix(d), WardConvention::kWardD2);
  EXPECT_NEAR(*t2.steps[0].linkage_height, 1.0, 1e-12);
  EXPECT_NEAR(*t2.steps[1].linkage_height, 2.0, 1e-12);
}

TEST(WardLinkage, MatchesCentroidOracleOnEuclideanPoints) {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const int m = 3 + rep % 8;
    const Matrix pts = gaussian_matrix(rng, m, 3);
    Matrix d(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) d(i, j) = (pts.row(i) - pts.row(j)).squaredNorm();
    const MergeTrace t = ward_linkage(DissimilarityMatrix(d));
    const auto oracle = centroid_ward(pts);
    ASSERT_EQ(t.steps.size(), oracle.size());
    for (std::size_t s = 0; s < oracle.size(); ++s) {
      EXPECT_EQ(t.steps[s].left_members, oracle[s].left) << rep << "/" << s;
      EXPECT_EQ(t.steps[s].right_members, oracle[s].right) << rep << "/" << s;
      EXPECT_NEAR(*t.steps[s].linkage_height, oracle[s].height, 1e-9 * (1 + oracle[s].height));
    }
    const MergeTrace t2 = ward_linkage(DissimilarityMatrix(d.cwiseSqrt()), WardConvention::kWardD2);
    for (std::size_t s = 0; s < oracle.size(); ++s) {
      EXPECT_EQ(t2.steps[s].left_members, oracle[s].left);
      EXPECT_NEAR(*t2.steps[s].linkage_height, std::sqrt(oracle[s].height),
                  1e-9 * (1 + oracle[s].height));
    }
  }
}

TEST(WardLinkage, HeightsNonDecreasingOnRandomDissimilarities) {
  Rng rng(12);
  for (int rep = 0; rep < 30; ++rep) {
    const int m = 2 + rep;
    Matrix d = Matrix::Zero(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < i; ++j) d(i, j) = d(j, i) = rng.uniform(0.0, 2.0);
    const MergeTrace t = ward_linkage(DissimilarityMatrix(d));
    EXPECT_NO_THROW(validate_trace(t));
    for (std::size_t s = 1; s < t.steps.size(); ++s) {
      EXPECT_GE(*t.steps[s].linkage_height, *t.steps[s - 1].linkage_height - 1e-12);
    }
  }
}

TEST(DissimilarityMatrix, RejectsBadInput) {
  Matrix d(2, 2);
  d << 0, 1, 2, 0;
  EXPECT_THROW(DissimilarityMatrix{d}, ContractViolation);
  d << 1, 1, 1, 0;
  EXPECT_THROW(DissimilarityMatrix{d}, ContractViolation);
}

TEST(Rcm, DuplicatedModelsMergeFirst) {
  Rng rng(13);
  ModelCollection base = random_collection(rng, 5, 30, 2);
  auto problems = base.problems();
  problems[3].design = problems[1].design;
  problems[3].response = problems[1].response;
  const ModelCollection c(problems);
  const MergeTrace t = rcm_cluster(c);
  EXPECT_EQ(t.steps[0].left_members, ClusterMembers{2});
  EXPECT_EQ(t.steps[0].right_members, ClusterMembers{4});
  EXPECT_NEAR(*t.steps[0].linkage_height, 0.0, 1e-12);
}

TEST(Rcm, DissimilarityAndHeights) {
  Rng rng(14);
  const ModelCollection c = correlated_collection(rng, 12, 40, 2);
  const Matrix corr = residual_correlation(residual_vectors(c));
  const DissimilarityMatrix d = correlation_dissimilarity(corr);
  EXPECT_LE((d.matrix() - d.matrix().transpose()).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(d.matrix().diagonal().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GE(d.matrix().minCoeff(), 0.0);
  EXPECT_LE(d.matrix().maxCoeff(), 2.0);
  const MergeTrace t = rcm_cluster(c);
  EXPECT_NO_THROW(validate_trace(t));
  for (std::size_t s = 1; s < t.steps.size(); ++s)
    EXPECT_GE(*t.steps[s].linkage_height, *t.steps[s - 1].linkage_height - 1e-12);
  for (std::size_t s = 0; s < t.steps.size(); ++s) {
    const int k = c.size() - static_cast<int>(s) - 1;
    EXPECT_EQ(*t.steps[s].training_error_after,
              aggregate_training_error(c, fit_avrc(c, partition_at(t, k))));
  }
}

TEST(Rcm, InterpolatingModelWarns) {
  Rng rng(15);
  auto problems = random_collection(rng, 3, 6, 2).problems();
  // Six observations, six columns in a single model is impossible with shared p,
  // so make one model's response lie in its column space instead.
  problems[1].response = problems[1].design * Vector::Ones(2);
  const MergeTrace t = rcm_cluster(ModelCollection(problems));
  ASSERT_EQ(t.warnings.size(), 1u);
  EXPECT_NE(t.warnings[0].find("model 2"), std::string::npos);
}

namespace {

SynthDataset block_dataset() {
  SynthConfig cfg;
  cfg.m = 50;
  cfg.n = 2000;
  cfg.n_test = 1;
  cfg.p = 5;
  cfg.covariance = CovarianceSpec::block_exchangeable(10, 0.9, 0.1, 1.0);
  cfg.seed = 17;
  return generate(cfg);
}

}  // namespace

TEST(Clustering, RcmRecoversGeneratingBlocks) {
  const SynthDataset ds = block_dataset();
  const std::vector<int> truth = ds.config.covariance.block_labels(ds.config.m);
  const MergeTrace rcm = rcm_cluster(ds.train, {WardConvention::kWardD, false, 1});
  EXPECT_DOUBLE_EQ(adjusted_rand(truth, partition_at(rcm, 10).labels()), 1.0);
}

// Known failure: the total-error objective favours absorbing singletons into
// the largest cluster (its summed error variance grows with its size), so at
// k = 10 TEM leaves one large cluster and nine singletons.
TEST(Clustering, TemRecoversGeneratingBlocks) {
  const SynthDataset ds = block_dataset();
  const std::vector<int> truth = ds.config.covariance.block_labels(ds.config.m);
  TemOptions opt;
  opt.threads = 4;
  const MergeTrace tem = tem_cluster(ds.train, opt);
  EXPECT_DOUBLE_EQ(adjusted_rand(truth, partition_at(tem, 10).labels()), 1.0);
}
