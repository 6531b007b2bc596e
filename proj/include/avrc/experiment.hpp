#pragma once

// Experiment runners behind the command-line tool: dataset generation and
// I/O, clustering, error curves over every cluster count, theory reports.
// Every output is a function of (config, seed) only; the thread count never
// changes a byte.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "avrc/clustering.hpp"
#include "avrc/errors.hpp"
#include "avrc/features.hpp"
#include "avrc/io.hpp"
#include "avrc/model.hpp"
#include "avrc/parallel.hpp"
#include "avrc/random.hpp"
#include "avrc/synth.hpp"
#include "avrc/theory.hpp"

namespace avrc {

inline constexpr int kConfigVersion = 1;

// ---- configuration --------------------------------------------------------

namespace detail {

inline Matrix json_matrix(const Json& j, const std::string& context) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw ConfigError(context + ": expected a non-empty array of rows");
  }
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(context + ": ragged matrix");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Json& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw ConfigError(context + ": non-numeric entry");
      m(i, c) = v.get<double>();
    }
  }
  return m;
}

inline Vector json_vector(const Json& j, const std::string& context) {
  if (!j.is_array()) throw ConfigError(context + ": expected an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(context + ": non-numeric entry");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json vector_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline std::pair<double, double> json_range(const Json& j, const std::string& key,
                                            std::pair<double, double> fallback,
                                            const std::string& context) {
  if (!j.contains(key)) return fallback;
  const Json& r = j.at(key);
  if (!r.is_array() || r.size() != 2 || !r[0].is_number() || !r[1].is_number()) {
    throw ConfigError(context + "." + key + ": expected [low, high]");
  }
  return {r[0].get<double>(), r[1].get<double>()};
}

}  // namespace detail

inline CovarianceSpec parse_covariance(const Json& j) {
  const std::string ctx = "covariance";
  check_keys(j, {"kind", "variance", "rho", "offdiag", "blocks", "within", "diag_boost", "matrix"},
             ctx);
  const std::string kind = json_get<std::string>(j, "kind", "independent", ctx);
  const double variance = json_get<double>(j, "variance", 1.0, ctx);
  if (kind == "independent") return CovarianceSpec::independent(variance);
  if (kind == "ar1") return CovarianceSpec::ar1(json_get<double>(j, "rho", 0.0, ctx), variance);
  if (kind == "exchangeable") {
    return CovarianceSpec::exchangeable(json_get<double>(j, "offdiag", 0.0, ctx), variance);
  }
  if (kind == "block_exchangeable") {
    return CovarianceSpec::block_exchangeable(json_get<int>(j, "blocks", 1, ctx),
                                              json_get<double>(j, "within", 0.0, ctx),
                                              json_get<double>(j, "diag_boost", 1.0, ctx),
                                              variance);
  }
  if (kind == "explicit") {
    if (!j.contains("matrix")) throw ConfigError(ctx + ": explicit kind needs 'matrix'");
    return CovarianceSpec::explicit_correlation(detail::json_matrix(j["matrix"], ctx + ".matrix"),
                                                variance);
  }
  throw ConfigError(ctx + ": unknown kind '" + kind + "'");
}

inline Json covariance_json(const CovarianceSpec& c) {
  Json j;
  switch (c.kind) {
    case CovarianceSpec::Kind::kIndependent: j["kind"] = "independent"; break;
    case CovarianceSpec::Kind::kAr1:
      j["kind"] = "ar1";
      j["rho"] = c.rho;
      break;
    case CovarianceSpec::Kind::kExchangeable:
      j["kind"] = "exchangeable";
      j["offdiag"] = c.offdiag;
      break;
    case CovarianceSpec::Kind::kBlockExchangeable:
      j["kind"] = "block_exchangeable";
      j["blocks"] = c.blocks;
      j["within"] = c.within;
      j["diag_boost"] = c.diag_boost;
      break;
    case CovarianceSpec::Kind::kExplicit:
      j["kind"] = "explicit";
      j["matrix"] = detail::matrix_json(c.explicit_matrix);
      break;
  }
  j["variance"] = c.variance;
  return j;
}

inline TestPredictors parse_test_predictors(const std::string& s) {
  if (s == "fresh") return TestPredictors::kFresh;
  if (s == "shared") return TestPredictors::kShared;
  throw ConfigError("test predictors must be 'fresh' or 'shared', got '" + s + "'");
}

inline const char* to_string(TestPredictors t) {
  return t == TestPredictors::kFresh ? "fresh" : "shared";
}

inline SynthConfig parse_synth(const Json& j) {
  const std::string ctx = "synth";
  check_keys(j,
             {"n", "n_test", "p", "q", "m", "misspecified", "test_predictors",
              "freeze_test_latent", "predictor_range", "coefficient_range", "covariance"},
             ctx);
  SynthConfig c;
  c.n = json_get<int>(j, "n", c.n, ctx);
  c.n_test = json_get<int>(j, "n_test", c.n_test, ctx);
  c.p = json_get<int>(j, "p", c.p, ctx);
  c.q = json_get<int>(j, "q", c.p, ctx);
  c.m = json_get<int>(j, "m", c.m, ctx);
  c.misspecified = json_get<bool>(j, "misspecified", c.misspecified, ctx);
  c.test_predictors =
      parse_test_predictors(json_get<std::string>(j, "test_predictors", "fresh", ctx));
  c.freeze_test_latent = json_get<bool>(j, "freeze_test_latent", false, ctx);
  std::tie(c.predictor_low, c.predictor_high) =
      detail::json_range(j, "predictor_range", {c.predictor_low, c.predictor_high}, ctx);
  std::tie(c.coefficient_low, c.coefficient_high) =
      detail::json_range(j, "coefficient_range", {c.coefficient_low, c.coefficient_high}, ctx);
  if (j.contains("covariance")) c.covariance = parse_covariance(j["covariance"]);
  return c;
}

inline Json synth_json(const SynthConfig& c) {
  Json j;
  j["n"] = c.n;
  j["n_test"] = c.n_test;
  j["p"] = c.p;
  j["q"] = c.q;
  j["m"] = c.m;
  j["misspecified"] = c.misspecified;
  j["test_predictors"] = to_string(c.test_predictors);
  j["freeze_test_latent"] = c.freeze_test_latent;
  j["predictor_range"] = {c.predictor_low, c.predictor_high};
  j["coefficient_range"] = {c.coefficient_low, c.coefficient_high};
  j["covariance"] = covariance_json(c.covariance);
  return j;
}

inline ClusteringMethod parse_method(const std::string& s) {
  if (s == "tem") return ClusteringMethod::kTem;
  if (s == "rcm") return ClusteringMethod::kRcm;
  throw ConfigError("method must be 'tem' or 'rcm', got '" + s + "'");
}

inline WardConvention parse_ward(const std::string& s) {
  if (s == "ward.D") return WardConvention::kWardD;
  if (s == "ward.D2") return WardConvention::kWardD2;
  throw ConfigError("ward must be 'ward.D' or 'ward.D2', got '" + s + "'");
}

inline const char* to_string(WardConvention w) {
  return w == WardConvention::kWardD ? "ward.D" : "ward.D2";
}

/// Everything a simulate / cluster / curve run depends on.
struct ExperimentConfig {
  SynthConfig synth;
  std::optional<std::string> dataset;  // load instead of generating
  ClusteringMethod method = ClusteringMethod::kTem;
  WardConvention ward = WardConvention::kWardD;
  std::size_t replicates = 1;
  std::vector<int> k_grid;  // empty: every k in 1..M
  std::uint64_t seed = 0;
};

inline ExperimentConfig parse_experiment_config(const Json& j) {
  const std::string ctx = "config";
  check_keys(j, {"version", "seed", "method", "ward", "replicates", "k_grid", "dataset", "synth"},
             ctx);
  if (!j.contains("version")) throw ConfigError("config: missing 'version'");
  const int version = json_get<int>(j, "version", 0, ctx);
  if (version != kConfigVersion) {
    throw ConfigError("config: unsupported version " + std::to_string(version));
  }
  ExperimentConfig c;
  c.seed = json_get<std::uint64_t>(j, "seed", 0, ctx);
  c.method = parse_method(json_get<std::string>(j, "method", "tem", ctx));
  c.ward = parse_ward(json_get<std::string>(j, "ward", "ward.D", ctx));
  const long long reps = json_get<long long>(j, "replicates", 1, ctx);
  if (reps < 1) throw ConfigError("config: replicates must be >= 1");
  c.replicates = static_cast<std::size_t>(reps);
  c.k_grid = json_get<std::vector<int>>(j, "k_grid", {}, ctx);
  if (j.contains("dataset")) c.dataset = json_get<std::string>(j, "dataset", "", ctx);
  if (j.contains("synth")) c.synth = parse_synth(j["synth"]);
  return c;
}

inline Json experiment_json(const ExperimentConfig& c) {
  Json j;
  j["version"] = kConfigVersion;
  j["seed"] = c.seed;
  j["method"] = to_string(c.method);
  if (c.method == ClusteringMethod::kRcm) j["ward"] = to_string(c.ward);
  j["replicates"] = c.replicates;
  j["k_grid"] = c.k_grid;
  if (c.dataset) {
    j["dataset"] = *c.dataset;
  } else {
    j["synth"] = synth_json(c.synth);
  }
  return j;
}

inline Json rng_json() {
  Json j;
  j["name"] = std::string(kRngName);
  j["version"] = kRngVersion;
  return j;
}

// ---- datasets -------------------------------------------------------------

/// Training collection plus optional test data (indexed by model id - 1).
struct Dataset {
  ModelCollection train;
  std::vector<Matrix> test_designs;
  std::vector<Vector> test_responses;

  bool has_test() const { return !test_designs.empty(); }
};

inline Dataset to_dataset(SynthDataset ds) {
  return {std::move(ds.train), std::move(ds.test_designs), std::move(ds.test_responses)};
}

namespace detail {

inline std::string model_file(int id, const char* split, const char* what) {
  return "model_" + std::to_string(id) + "_" + split + "_" + what + ".csv";
}

}  // namespace detail

/// One design and one response CSV per model and split, plus manifest.json.
inline void write_dataset(const std::filesystem::path& dir, const SynthDataset& ds,
                          const Json& config_echo) {
  std::filesystem::create_directories(dir);
  const int m = ds.train.size();
  Json files = Json::array();
  for (int id = 1; id <= m; ++id) {
    const auto& pr = ds.train.problem(id);
    const auto u = static_cast<std::size_t>(id - 1);
    const std::string names[4] = {detail::model_file(id, "train", "design"),
                                  detail::model_file(id, "train", "response"),
                                  detail::model_file(id, "test", "design"),
                                  detail::model_file(id, "test", "response")};
    write_matrix_csv(dir / names[0], pr.design);
    write_vector_csv(dir / names[1], pr.response);
    write_matrix_csv(dir / names[2], ds.test_designs[u]);
    write_vector_csv(dir / names[3], ds.test_responses[u]);
    for (const auto& nm : names) files.push_back(nm);
  }
  Matrix beta(m, ds.train.p());
  for (int id = 1; id <= m; ++id) beta.row(id - 1) = ds.beta[static_cast<std::size_t>(id - 1)];
  write_matrix_csv(dir / "beta.csv", beta);
  if (ds.config.misspecified) {
    Matrix theta(m, ds.config.q);
    for (int id = 1; id <= m; ++id) theta.row(id - 1) = ds.theta[static_cast<std::size_t>(id - 1)];
    write_matrix_csv(dir / "theta.csv", theta);
  }
  Json manifest;
  manifest["version"] = kConfigVersion;
  manifest["kind"] = "dataset";
  manifest["rng"] = rng_json();
  manifest["seed"] = ds.config.seed;
  manifest["model_count"] = m;
  manifest["n"] = ds.train.n();
  manifest["n_test"] = ds.config.n_test;
  manifest["p"] = ds.train.p();
  manifest["config"] = config_echo;
  manifest["files"] = files;
  write_json(dir / "manifest.json", manifest);
}

/// Reads a directory written by write_dataset. Test files are optional.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  const Json manifest = read_json(dir / "manifest.json");
  const int m = json_get<int>(manifest, "model_count", 0, "manifest");
  if (m < 1) throw InvalidData(dir.string() + ": manifest has no models");
  Dataset ds;
  std::vector<RegressionProblem> problems;
  bool tests = true;
  for (int id = 1; id <= m; ++id) {
    problems.push_back({read_matrix_csv(dir / detail::model_file(id, "train", "design")),
                        read_vector_csv(dir / detail::model_file(id, "train", "response")), id});
    const auto td = dir / detail::model_file(id, "test", "design");
    const auto tr = dir / detail::model_file(id, "test", "response");
    if (tests && std::filesystem::exists(td) && std::filesystem::exists(tr)) {
      ds.test_designs.push_back(read_matrix_csv(td));
      ds.test_responses.push_back(read_vector_csv(tr));
    } else {
      tests = false;
    }
  }
  if (!tests) {
    ds.test_designs.clear();
    ds.test_responses.clear();
  }
  try {
    ds.train = ModelCollection(std::move(problems));
  } catch (const ContractViolation& e) {
    throw InvalidData(dir.string() + ": " + e.what());
  }
  return ds;
}

// ---- clustering -------------------------------------------------------------

inline MergeTrace cluster_models(const ModelCollection& collection, ClusteringMethod method,
                                 WardConvention ward, unsigned threads,
                                 ClusterFitCache* cache = nullptr) {
  if (method == ClusteringMethod::kTem) {
    TemOptions opt;
    opt.threads = threads;
    return tem_cluster(collection, opt, cache);
  }
  RcmOptions opt;
  opt.convention = ward;
  opt.threads = threads;
  return rcm_cluster(collection, opt, cache);
}

/// trace.jsonl, dendrogram.csv and manifest.json.
inline void write_cluster_outputs(const std::filesystem::path& dir, const MergeTrace& trace,
                                  const ModelCollection& collection, const Json& config_echo) {
  std::filesystem::create_directories(dir);
  write_text(dir / "trace.jsonl", trace_to_jsonl(trace, collection.n()));
  write_text(dir / "dendrogram.csv", dendrogram_csv(trace, collection.n()));
  Json manifest;
  manifest["version"] = kConfigVersion;
  manifest["kind"] = "cluster";
  manifest["method"] = to_string(trace.method);
  manifest["model_count"] = trace.model_count;
  manifest["n"] = collection.n();
  manifest["p"] = collection.p();
  manifest["config"] = config_echo;
  manifest["warnings"] = trace.warnings;
  write_json(dir / "manifest.json", manifest);
}

// ---- error curves -----------------------------------------------------------

struct CurvePoint {
  int k = 0;
  double train_mse = 0.0;  // aggregate RSS / n
  double test_mse = 0.0;   // aggregate RSS / n_test
  long long max_cluster_params = 0;
  bool interpolating = false;  // some cluster fits its training data exactly
};

struct ReplicateCurve {
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  std::vector<CurvePoint> points;  // ascending k
  std::optional<std::string> failure;
};

struct MeanCurvePoint {
  int k = 0;
  double train_mse = 0.0;
  double test_mse = 0.0;
  double train_rmse = 0.0;
  double test_rmse = 0.0;
  double max_cluster_params = 0.0;
  double interpolating_fraction = 0.0;
};

struct CurveResult {
  std::vector<ReplicateCurve> replicates;
  std::vector<MeanCurvePoint> mean;  // over successful replicates
  std::optional<int> argmin_test_k;
  Eigen::Index n = 0;
};

inline std::uint64_t replicate_seed(std::uint64_t seed, std::size_t replicate) {
  return derive_seed(seed, {static_cast<std::uint64_t>(StreamRole::kReplicate), replicate});
}

/// Error curve of one dataset: cluster once, then fit partition_at(k) for each k.
inline std::vector<CurvePoint> dataset_curve(const Dataset& ds, ClusteringMethod method,
                                             WardConvention ward, const std::vector<int>& k_grid,
                                             unsigned threads) {
  if (!ds.has_test()) throw InvalidData("curve: dataset has no test data");
  const ModelCollection& train = ds.train;
  const int m = train.size();
  ClusterFitCache cache;
  MergeTrace trace;
  if (method == ClusteringMethod::kTem) {
    TemOptions opt;
    opt.threads = threads;
    trace = tem_cluster(train, opt, &cache);
  } else {
    RcmOptions opt;
    opt.convention = ward;
    opt.threads = threads;
    opt.fill_errors = false;  // the curve computes them below
    trace = rcm_cluster(train, opt, &cache);
  }
  std::vector<int> ks = k_grid;
  if (ks.empty()) {
    for (int k = 1; k <= m; ++k) ks.push_back(k);
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  const double n = static_cast<double>(train.n());
  const double n_test = static_cast<double>(ds.test_designs.front().rows());
  std::vector<CurvePoint> points;
  for (int k : ks) {
    const ClusterPartition part = partition_at(trace, k);
    const AvrcFit fit = fit_avrc(train, part, threads, &cache);
    CurvePoint pt;
    pt.k = k;
    pt.train_mse = aggregate_training_error(train, fit) / n;
    pt.test_mse = aggregate_test_error(fit, ds.test_designs, ds.test_responses) / n_test;
    for (std::size_t j = 0; j < part.size(); ++j) {
      const auto size = static_cast<long long>(part.clusters()[j].size());
      pt.max_cluster_params = std::max(pt.max_cluster_params, size * train.p());
      if (fit.per_cluster_rank[j] >= static_cast<std::size_t>(train.n())) pt.interpolating = true;
    }
    points.push_back(pt);
  }
  return points;
}

/**
 * Runs every replicate (in parallel across replicates; the remaining thread
 * budget goes to each replicate's clustering) and averages the curves.
 * A failing replicate is recorded and left out of the mean.
 */
inline CurveResult run_curve(const ExperimentConfig& config, unsigned threads) {
  CurveResult result;
  std::optional<Dataset> loaded;
  std::size_t reps = config.replicates;
  if (config.dataset) {
    loaded = load_dataset(*config.dataset);
    reps = 1;
  } else {
    config.synth.validate();
  }
  result.replicates.resize(reps);
  const unsigned outer = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(reps)));
  const unsigned inner = std::max(1u, threads / outer);
  parallel_for(reps, outer, [&](std::size_t r) {
    ReplicateCurve& rc = result.replicates[r];
    rc.replicate = r;
    rc.seed = loaded ? config.seed : replicate_seed(config.seed, r);
    try {
      if (loaded) {
        rc.points = dataset_curve(*loaded, config.method, config.ward, config.k_grid, inner);
      } else {
        SynthConfig sc = config.synth;
        sc.seed = rc.seed;
        const Dataset ds = to_dataset(generate(sc));
        rc.points = dataset_curve(ds, config.method, config.ward, config.k_grid, inner);
      }
    } catch (const Error& e) {
      rc.failure = e.what();
      rc.points.clear();
    }
  });
  result.n = loaded ? loaded->train.n() : config.synth.n;

  std::size_t ok = 0;
  for (const auto& rc : result.replicates) {
    if (rc.failure) continue;
    if (result.mean.empty()) {
      for (const auto& pt : rc.points) result.mean.push_back({pt.k});
    }
    for (std::size_t i = 0; i < rc.points.size(); ++i) {
      const CurvePoint& pt = rc.points[i];
      MeanCurvePoint& mp = result.mean[i];
      mp.train_mse += pt.train_mse;
      mp.test_mse += pt.test_mse;
      mp.train_rmse += std::sqrt(pt.train_mse);
      mp.test_rmse += std::sqrt(pt.test_mse);
      mp.max_cluster_params += static_cast<double>(pt.max_cluster_params);
      mp.interpolating_fraction += pt.interpolating ? 1.0 : 0.0;
    }
    ++ok;
  }
  for (auto& mp : result.mean) {
    const double c = static_cast<double>(ok);
    mp.train_mse /= c;
    mp.test_mse /= c;
    mp.train_rmse /= c;
    mp.test_rmse /= c;
    mp.max_cluster_params /= c;
    mp.interpolating_fraction /= c;
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& mp : result.mean) {
    if (std::isfinite(mp.test_mse) && mp.test_mse < best) {
      best = mp.test_mse;
      result.argmin_test_k = mp.k;
    }
  }
  return result;
}

inline std::string replicate_curve_csv(const ReplicateCurve& rc) {
  std::string out = "k,train_mse,test_mse,train_rmse,test_rmse,max_cluster_params,interpolating\n";
  for (const auto& pt : rc.points) {
    out += std::to_string(pt.k) + "," + format_double(pt.train_mse) + "," +
           format_double(pt.test_mse) + "," + format_double(std::sqrt(pt.train_mse)) + "," +
           format_double(std::sqrt(pt.test_mse)) + "," + std::to_string(pt.max_cluster_params) +
           "," + (pt.interpolating ? "1" : "0") + "\n";
  }
  return out;
}

inline std::string mean_curve_csv(const CurveResult& result) {
  std::string out =
      "k,train_mse,test_mse,train_rmse,test_rmse,max_cluster_params,interpolating_fraction\n";
  for (const auto& mp : result.mean) {
    out += std::to_string(mp.k) + "," + format_double(mp.train_mse) + "," +
           format_double(mp.test_mse) + "," + format_double(mp.train_rmse) + "," +
           format_double(mp.test_rmse) + "," + format_double(mp.max_cluster_params) + "," +
           format_double(mp.interpolating_fraction) + "\n";
  }
  return out;
}

/// curve_rep_<r>.csv per successful replicate, curve_mean.csv, manifest.json.
inline void write_curve_outputs(const std::filesystem::path& dir, const CurveResult& result,
                                const ExperimentConfig& config) {
  std::filesystem::create_directories(dir);
  Json failures = Json::array();
  for (const auto& rc : result.replicates) {
    if (rc.failure) {
      failures.push_back({{"replicate", rc.replicate}, {"seed", rc.seed}, {"reason", *rc.failure}});
      continue;
    }
    write_text(dir / ("curve_rep_" + std::to_string(rc.replicate) + ".csv"),
               replicate_curve_csv(rc));
  }
  write_text(dir / "curve_mean.csv", mean_curve_csv(result));
  Json manifest;
  manifest["version"] = kConfigVersion;
  manifest["kind"] = "curve";
  manifest["rng"] = rng_json();
  manifest["config"] = experiment_json(config);
  manifest["replicates"] = result.replicates.size();
  manifest["succeeded"] = result.replicates.size() - failures.size();
  manifest["failures"] = failures;
  manifest["argmin_test_k"] = result.argmin_test_k ? Json(*result.argmin_test_k) : Json(nullptr);
  write_json(dir / "manifest.json", manifest);
}

/**
 * Peak-then-descent check on a mean curve. The crossing k is the largest k
 * at which the median (over replicates) largest-cluster parameter count
 * reaches n. The peak is the worst mean test MSE within two steps of it;
 * it must exceed the k = M value and the best value further below.
 */
struct DoubleDescentSummary {
  std::optional<int> k_cross;
  int k_peak = 0;
  double peak_test_mse = 0.0;
  double test_mse_at_m = 0.0;
  double best_below = std::numeric_limits<double>::infinity();
  int k_best_below = 0;
  bool signature = false;
};

inline DoubleDescentSummary double_descent_signature(const CurveResult& result) {
  DoubleDescentSummary s;
  if (result.mean.empty()) return s;
  const int m = result.mean.back().k;
  auto at = [&](int k) -> const MeanCurvePoint* {
    for (const auto& mp : result.mean)
      if (mp.k == k) return &mp;
    return nullptr;
  };
  for (const auto& mp : result.mean) {
    std::vector<long long> params;
    for (const auto& rc : result.replicates) {
      if (rc.failure) continue;
      for (const auto& pt : rc.points)
        if (pt.k == mp.k) params.push_back(pt.max_cluster_params);
    }
    if (params.empty()) continue;
    std::nth_element(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(params.size() / 2),
                     params.end());
    if (params[params.size() / 2] >= result.n) s.k_cross = std::max(s.k_cross.value_or(0), mp.k);
  }
  if (!s.k_cross || !at(m)) return s;
  s.test_mse_at_m = at(m)->test_mse;
  const int lo = std::max(2, *s.k_cross - 2);
  const int hi = std::min(m - 1, *s.k_cross + 2);
  s.peak_test_mse = -std::numeric_limits<double>::infinity();
  for (int k = lo; k <= hi; ++k) {
    const auto* mp = at(k);
    if (mp && (mp->test_mse > s.peak_test_mse || std::isnan(mp->test_mse))) {
      s.peak_test_mse = std::isnan(mp->test_mse) ? std::numeric_limits<double>::infinity()
                                                 : mp->test_mse;
      s.k_peak = k;
    }
  }
  for (int k = 1; k < lo; ++k) {
    const auto* mp = at(k);
    if (mp && std::isfinite(mp->test_mse) && mp->test_mse < s.best_below) {
      s.best_below = mp->test_mse;
      s.k_best_below = k;
    }
  }
  s.signature = s.k_peak != 0 && s.peak_test_mse > s.test_mse_at_m &&
                s.peak_test_mse > s.best_below && std::isfinite(s.best_below);
  return s;
}

// ---- theory ---------------------------------------------------------------

inline Json report_json(const ExpectationReport& r) {
  Json j;
  j["closed_form"] = json_number(r.closed_form);
  j["mc_mean"] = json_number(r.mc_mean);
  j["mc_se"] = json_number(r.mc_se);
  j["replicates"] = r.replicates;
  j["z_score"] = json_number(r.z_score);
  return j;
}

struct TheoryConfig {
  std::uint64_t seed = 0;
  std::size_t replicates = 10000;
  ThreeModelInstance instance;
  Json instance_echo;
};

inline ThreeModelInstance parse_instance(const Json& j) {
  const std::string ctx = "instance";
  const std::string kind = json_get<std::string>(j, "kind", "random", ctx);
  if (kind == "random") {
    check_keys(j, {"kind", "n", "p", "q", "misspecified", "kernel_rho", "max_cross_correlation",
                   "instance_seed"},
               ctx);
    InstanceOptions opt;
    opt.n = json_get<int>(j, "n", 30, ctx);
    opt.p = json_get<int>(j, "p", 2, ctx);
    opt.q = json_get<int>(j, "q", static_cast<int>(opt.p), ctx);
    opt.misspecified = json_get<bool>(j, "misspecified", true, ctx);
    opt.kernel_rho = json_get<double>(j, "kernel_rho", 0.0, ctx);
    opt.max_cross_correlation = json_get<double>(j, "max_cross_correlation", 0.45, ctx);
    if (opt.n < 1 || opt.p < 1 || opt.q < 0 || 2 * opt.p > opt.n) {
      throw ConfigError("instance: need n >= 2p, p >= 1, q >= 0");
    }
    return random_three_model_instance(json_get<std::uint64_t>(j, "instance_seed", 0, ctx), opt);
  }
  if (kind == "explicit") {
    check_keys(j, {"kind", "designs", "beta", "theta", "latent_cov", "noise_cov"}, ctx);
    ThreeModelInstance inst;
    for (const char* key : {"designs", "beta", "theta", "latent_cov"}) {
      if (!j.contains(key) || !j[key].is_array() || j[key].size() != 3) {
        throw ConfigError(ctx + "." + key + ": expected three entries");
      }
    }
    for (std::size_t m = 0; m < 3; ++m) {
      const std::string sfx = "[" + std::to_string(m) + "]";
      inst.designs[m] = detail::json_matrix(j["designs"][m], ctx + ".designs" + sfx);
      inst.beta[m] = detail::json_vector(j["beta"][m], ctx + ".beta" + sfx);
      inst.theta[m] = detail::json_vector(j["theta"][m], ctx + ".theta" + sfx);
      inst.latent_cov[m] = inst.theta[m].size() == 0
                               ? Matrix(0, 0)
                               : detail::json_matrix(j["latent_cov"][m], ctx + ".latent_cov" + sfx);
    }
    if (!j.contains("noise_cov")) throw ConfigError(ctx + ": missing noise_cov");
    inst.noise_cov = detail::json_matrix(j["noise_cov"], ctx + ".noise_cov");
    return inst;
  }
  throw ConfigError(ctx + ": unknown kind '" + kind + "'");
}

inline TheoryConfig parse_theory_config(const Json& j) {
  const std::string ctx = "config";
  check_keys(j, {"version", "seed", "replicates", "instance"}, ctx);
  if (json_get<int>(j, "version", 0, ctx) != kConfigVersion) {
    throw ConfigError("config: missing or unsupported version");
  }
  TheoryConfig c;
  c.seed = json_get<std::uint64_t>(j, "seed", 0, ctx);
  c.replicates = json_get<std::size_t>(j, "replicates", 10000, ctx);
  c.instance_echo = j.contains("instance") ? j["instance"] : Json::object({{"kind", "random"}});
  c.instance = parse_instance(c.instance_echo);
  return c;
}

namespace detail {

// sigma when the block equals sigma I, nothing otherwise.
inline std::optional<double> scalar_block(const Matrix& b) {
  const double s = b(0, 0);
  const Matrix diff = b - s * Matrix::Identity(b.rows(), b.cols());
  if (diff.cwiseAbs().maxCoeff() <= 1e-12 * problem_scale(b)) return s;
  return std::nullopt;
}

}  // namespace detail

/// Closed forms with their Monte Carlo checks, as one JSON document.
inline Json run_theory(const TheoryConfig& config, unsigned threads) {
  const ThreeModelInstance& inst = config.instance;
  inst.validate();
  const ThreeModelReports reps = monte_carlo_all(inst, config.replicates, config.seed, threads);
  Json out;
  out["version"] = kConfigVersion;
  out["kind"] = "theory";
  out["rng"] = rng_json();
  out["seed"] = config.seed;
  out["instance"] = config.instance_echo;
  out["expected_R"] = report_json(reps.r);
  out["expected_train_error_diff"] = report_json(reps.train);
  out["expected_test_error_diff"] = report_json(reps.test);
  const auto s11 = detail::scalar_block(inst.block(1, 1));
  const auto s22 = detail::scalar_block(inst.block(2, 2));
  const auto s12 = detail::scalar_block(inst.block(1, 2));
  if (s11 && s22 && s12 && inst.designs[0].cols() == inst.designs[1].cols()) {
    const double scalar = expected_train_error_diff_scalar(
        inst.designs[0], inst.designs[1], *s11, *s22, *s12, inst.theta[0], inst.latent_cov[0],
        inst.theta[1], inst.latent_cov[1]);
    out["train_error_diff_scalar_form"] = json_number(scalar);
  }
  const TestErrorDecomposition dec = test_error_decomposition(inst);
  out["test_error_trace_part"] = json_number(dec.trace_part);
  out["test_error_bias_part"] = json_number(dec.bias_part);
  const bool nonnegative13 = inst.block(1, 3).minCoeff() >= 0.0 && inst.block(2, 3).minCoeff() >= 0.0;
  out["cross_covariances_nonnegative"] = nonnegative13;
  out["expected_R_nonpositive"] = reps.r.closed_form <= 1e-12 * problem_scale(inst.noise_cov);
  return out;
}

// ---- features -------------------------------------------------------------

/// Column-count manifest for a panel; designs are written unless dry_run.
inline Json run_features(const PanelSeries& panel, const DemandModelSpec& spec,
                         const std::filesystem::path& dir, bool dry_run) {
  spec.validate();
  panel.validate();
  std::filesystem::create_directories(dir);
  const auto m = static_cast<long long>(panel.unit_ids.size());
  const auto r = static_cast<long long>(panel.area_ids.size());
  Json manifest;
  manifest["version"] = kConfigVersion;
  manifest["kind"] = "features";
  manifest["spec"] = {{"T", spec.lags},
                      {"H", spec.temperature_bases},
                      {"Q", spec.cyclic_bases},
                      {"L", spec.weekday_dummies},
                      {"J", spec.intervals}};
  manifest["units"] = m;
  manifest["areas"] = r;
  manifest["days"] = panel.day_count();
  const long long expected_unit = spec.lags + static_cast<long long>(spec.cyclic_bases) *
                                                  spec.temperature_bases +
                                  spec.weekday_dummies;
  const long long expected_shared = m * spec.lags +
                                    r * spec.cyclic_bases * spec.temperature_bases +
                                    spec.weekday_dummies;
  manifest["expected_unit_columns"] = expected_unit;
  manifest["expected_shared_columns"] = expected_shared;
  if (dry_run) {
    manifest["unit_columns"] = spec.unit_columns();
    manifest["shared_columns"] = spec.shared_columns(m, r);
    manifest["dry_run"] = true;
  } else {
    Json units = Json::array();
    long long unit_cols = -1;
    for (std::size_t u = 0; u < panel.unit_ids.size(); ++u) {
      const RegressionProblem pr = build_design(panel, spec, u, static_cast<int>(u) + 1);
      const std::string stem = "unit_" + panel.unit_ids[u];
      write_matrix_csv(dir / (stem + "_design.csv"), pr.design);
      write_vector_csv(dir / (stem + "_response.csv"), pr.response);
      unit_cols = pr.design.cols();
      units.push_back({{"unit_id", panel.unit_ids[u]},
                       {"area", panel.area_ids[static_cast<std::size_t>(panel.unit_area[u])]},
                       {"rows", pr.design.rows()},
                       {"columns", pr.design.cols()}});
    }
    std::vector<std::size_t> all(panel.unit_ids.size());
    for (std::size_t u = 0; u < all.size(); ++u) all[u] = u;
    const RegressionProblem avr = build_avr_design(panel, spec, all);
    write_matrix_csv(dir / "avr_design.csv", avr.design);
    write_vector_csv(dir / "avr_response.csv", avr.response);
    manifest["unit_columns"] = unit_cols;
    manifest["shared_columns"] = avr.design.cols();
    manifest["rows"] = avr.design.rows();
    manifest["unit_designs"] = units;
    manifest["dry_run"] = false;
  }
  manifest["unit_columns_ok"] = manifest["unit_columns"].get<long long>() == expected_unit;
  manifest["shared_columns_ok"] = manifest["shared_columns"].get<long long>() == expected_shared;
  write_json(dir / "manifest.json", manifest);
  return manifest;
}

}  // namespace avrc
