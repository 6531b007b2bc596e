#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <sstream>

#include "avrc/experiment.hpp"
#include "support.hpp"

using namespace avrc;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string("\"") + AVRC_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

void write_config(const fs::path& path, const Json& j) { write_json(path, j); }

Json small_experiment(int m, std::uint64_t seed, const std::string& method = "tem") {
  return {{"version", 1},
          {"seed", seed},
          {"method", method},
          {"replicates", 3},
          {"synth",
           {{"n", 12},
            {"n_test", 10},
            {"p", 2},
            {"q", 1},
            {"m", m},
            {"misspecified", true},
            {"covariance", {{"kind", "ar1"}, {"rho", -0.5}, {"variance", 0.5}}}}}};
}

}  // namespace

TEST(MatrixCsv, RoundTripIsExact) {
  Matrix m(3, 4);
  m << 0.1, -0.0, 1e-310, 1.0 / 3.0, std::numeric_limits<double>::infinity(),
      -std::numeric_limits<double>::infinity(), 6.02214076e23, -2.5, 1e300, -1e-300,
      std::numeric_limits<double>::max(), std::numeric_limits<double>::min();
  std::stringstream s;
  write_matrix_csv(s, m);
  const Matrix back = read_matrix_csv(s);
  ASSERT_EQ(back.rows(), 3);
  ASSERT_EQ(back.cols(), 4);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) EXPECT_EQ(back(i, j), m(i, j));
  EXPECT_TRUE(std::signbit(back(0, 1)));

  std::stringstream with_nan("1,2\nnan,inf\n");
  const Matrix n = read_matrix_csv(with_nan);
  EXPECT_TRUE(std::isnan(n(0, 0)));
  EXPECT_TRUE(std::isinf(n(0, 1)));

  std::stringstream empty;
  write_matrix_csv(empty, Matrix(0, 3));
  EXPECT_EQ(read_matrix_csv(empty).cols(), 3);
}

TEST(MatrixCsv, RejectsMalformed) {
  for (const char* text : {"", "2\n1\n2\n", "1,2\n1\n", "1,2\n1,2,3\n", "2,1\n1\n",
                           "1,1\n1\n2\n", "1,1\nabc\n", "1,1\n1.5x\n", "1,1\n 2\n", "1,1\n1e999\n", "-1,2\n"}) {
    std::stringstream s(text);
    EXPECT_THROW(read_matrix_csv(s), InvalidData) << text;
  }
  EXPECT_THROW(read_matrix_csv(fs::path("/nonexistent/file.csv")), InvalidData);
}

TEST(TraceIo, JsonlRoundTrip) {
  Rng rng(5);
  const ModelCollection c = avrc::testing::random_collection(rng, 6, 12, 2);
  for (const MergeTrace& trace : {tem_cluster(c, {}), rcm_cluster(c, {})}) {
    const std::string text = trace_to_jsonl(trace, c.n());
    EXPECT_EQ(lines_of(text).size(), 5u);
    const MergeTrace back = trace_from_jsonl(text, 6, trace.method);
    ASSERT_EQ(back.steps.size(), trace.steps.size());
    for (std::size_t s = 0; s < trace.steps.size(); ++s) {
      const MergeStep &a = trace.steps[s], &b = back.steps[s];
      EXPECT_EQ(a.step_index, b.step_index);
      EXPECT_EQ(a.left, b.left);
      EXPECT_EQ(a.right, b.right);
      EXPECT_EQ(a.new_cluster, b.new_cluster);
      EXPECT_EQ(a.left_members, b.left_members);
      EXPECT_EQ(a.right_members, b.right_members);
      EXPECT_EQ(a.training_error_after, b.training_error_after);
      EXPECT_EQ(a.linkage_height, b.linkage_height);
    }
    EXPECT_EQ(trace_to_jsonl(back, c.n()), text);
  }
  EXPECT_THROW(trace_from_jsonl("{\"step\": 1}\n", 6, ClusteringMethod::kTem), InvalidData);
  EXPECT_THROW(trace_from_jsonl("not json\n", 6, ClusteringMethod::kTem), InvalidData);
}

TEST(TraceIo, DendrogramTable) {
  Rng rng(6);
  const ModelCollection c = avrc::testing::random_collection(rng, 4, 10, 2);
  const MergeTrace trace = rcm_cluster(c, {});
  const auto rows = lines_of(dendrogram_csv(trace, c.n()));
  ASSERT_EQ(rows.size(), 1u + 2u * 3u);
  EXPECT_EQ(rows[0], "parent,child,step,height,train_mse");
  EXPECT_EQ(rows.back().substr(0, 2), "7,");
  const MergeStep& first = trace.steps.front();
  EXPECT_EQ(rows[1], "5," + std::to_string(first.left) + ",1," +
                         format_double(*first.linkage_height) + "," +
                         format_double(*first.training_error_after / 10.0));
}

TEST(Config, ParsesAndRejects) {
  const ExperimentConfig c = parse_experiment_config(small_experiment(4, 9, "rcm"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.method, ClusteringMethod::kRcm);
  EXPECT_EQ(c.replicates, 3u);
  EXPECT_EQ(c.synth.m, 4);
  EXPECT_EQ(c.synth.covariance.covariance(3)(0, 2), 0.5 * 0.25);

  Json bad = small_experiment(4, 9);
  bad["extra"] = 1;
  EXPECT_THROW(parse_experiment_config(bad), ConfigError);
  bad = small_experiment(4, 9);
  bad["synth"]["sigma"] = 1;
  EXPECT_THROW(parse_experiment_config(bad), ConfigError);
  bad = small_experiment(4, 9);
  bad["synth"]["covariance"]["bogus"] = 1;
  EXPECT_THROW(parse_experiment_config(bad), ConfigError);
  bad = small_experiment(4, 9);
  bad.erase("version");
  EXPECT_THROW(parse_experiment_config(bad), ConfigError);
  bad = small_experiment(4, 9);
  bad["version"] = 2;
  EXPECT_THROW(parse_experiment_config(bad), ConfigError);
  bad = small_experiment(4, 9);
  bad["method"] = "kmeans";
  EXPECT_THROW(parse_experiment_config(bad), ConfigError);
  bad = small_experiment(4, 9);
  bad["replicates"] = 0;
  EXPECT_THROW(parse_experiment_config(bad), ConfigError);
  bad = small_experiment(4, 9);
  bad["synth"]["n"] = "many";
  EXPECT_THROW(parse_experiment_config(bad), ConfigError);

  // The echo parses back to the same configuration.
  const Json echo = experiment_json(c);
  EXPECT_EQ(experiment_json(parse_experiment_config(echo)), echo);
}

TEST(Config, TheoryConfig) {
  const Json j = {{"version", 1},
                  {"seed", 4},
                  {"replicates", 200},
                  {"instance", {{"kind", "random"}, {"n", 20}, {"instance_seed", 3}}}};
  const TheoryConfig c = parse_theory_config(j);
  EXPECT_EQ(c.replicates, 200u);
  EXPECT_EQ(c.instance.n(), 20);
  Json bad = j;
  bad["instance"]["kind"] = "mystery";
  EXPECT_THROW(parse_theory_config(bad), ConfigError);
  bad = j;
  bad["instance"]["n"] = 3;
  EXPECT_THROW(parse_theory_config(bad), ConfigError);
}

TEST(Dataset, WriteLoadRoundTrip) {
  avrc::testing::TempDir dir("dataset");
  SynthConfig sc = parse_experiment_config(small_experiment(3, 1)).synth;
  sc.seed = 77;
  const SynthDataset ds = generate(sc);
  write_dataset(dir.path(), ds, Json::object());
  const Dataset back = load_dataset(dir.path());
  ASSERT_EQ(back.train.size(), 3);
  for (int id = 1; id <= 3; ++id) {
    EXPECT_EQ(back.train.problem(id).design, ds.train.problem(id).design);
    EXPECT_EQ(back.train.problem(id).response, ds.train.problem(id).response);
    EXPECT_EQ(back.test_designs[static_cast<std::size_t>(id - 1)],
              ds.test_designs[static_cast<std::size_t>(id - 1)]);
  }
  fs::remove(dir.path() / "model_2_train_design.csv");
  EXPECT_THROW(load_dataset(dir.path()), InvalidData);
}

class Cli : public ::testing::Test {
 protected:
  avrc::testing::TempDir dir{"cli"};
  fs::path log = dir.path() / "log.txt";

  fs::path config(const Json& j, const std::string& name = "config.json") {
    const fs::path p = dir.path() / name;
    write_config(p, j);
    return p;
  }
  int run(const std::string& args) { return run_cli(args, log); }
  std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }
};

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("cluster --out " + q(dir.path() / "x") + " --method kmeans"), 2);
  EXPECT_EQ(run("curve --out " + q(dir.path() / "x") + " --reps 0"), 2);
  Json bad = small_experiment(3, 1);
  bad["surprise"] = true;
  EXPECT_EQ(run("curve --config " + q(config(bad)) + " --out " + q(dir.path() / "x")), 2);
  fs::create_directories(dir.path() / "broken");
  write_text(dir.path() / "broken" / "manifest.json", "{\"model_count\": 2}\n");
  write_text(dir.path() / "broken" / "model_1_train_design.csv", "2,1\n1\nfoo\n");
  EXPECT_EQ(run("cluster --data " + q(dir.path() / "broken") + " --out " + q(dir.path() / "x")), 3);
  // Identical designs make (X1, X2) rank deficient.
  const Json x = Json::array({{1.0}, {2.0}, {3.0}});
  Matrix noise = Matrix::Identity(9, 9);
  const Json theory = {{"version", 1},
                       {"replicates", 100},
                       {"instance",
                        {{"kind", "explicit"},
                         {"designs", {x, x, x}},
                         {"beta", {{1.0}, {1.0}, {1.0}}},
                         {"theta", {Json::array(), Json::array(), Json::array()}},
                         {"latent_cov", {Json::array(), Json::array(), Json::array()}},
                         {"noise_cov", detail::matrix_json(noise)}}}};
  EXPECT_EQ(run("theory --config " + q(config(theory, "theory.json")) + " --out " +
                q(dir.path() / "t")),
            4);
}

TEST_F(Cli, SimulateThenClusterFromDisk) {
  const fs::path data = dir.path() / "data";
  const fs::path out = dir.path() / "cl";
  ASSERT_EQ(run("simulate --config " + q(config(small_experiment(5, 2))) + " --out " + q(data)), 0);
  EXPECT_TRUE(fs::exists(data / "model_5_test_response.csv"));
  EXPECT_TRUE(fs::exists(data / "beta.csv"));
  EXPECT_TRUE(fs::exists(data / "theta.csv"));
  ASSERT_EQ(run("cluster --data " + q(data) + " --out " + q(out)), 0);
  const auto steps = lines_of(read_text(out / "trace.jsonl"));
  EXPECT_EQ(steps.size(), 4u);
  EXPECT_EQ(lines_of(read_text(out / "dendrogram.csv")).size(), 9u);
  const Json manifest = read_json(out / "manifest.json");
  EXPECT_EQ(manifest["model_count"], 5);
  EXPECT_EQ(manifest["method"], "tem");

  // Same result as clustering the generated data in memory.
  const Dataset ds = load_dataset(data);
  EXPECT_EQ(read_text(out / "trace.jsonl"), trace_to_jsonl(tem_cluster(ds.train, {}), 12));
}

TEST_F(Cli, DuplicatedModelMergesFirstUnderRcm) {
  const fs::path data = dir.path() / "data";
  ASSERT_EQ(run("simulate --config " + q(config(small_experiment(5, 3))) + " --out " + q(data)), 0);
  for (const char* what : {"design", "response"}) {
    fs::copy_file(data / (std::string("model_2_train_") + what + ".csv"),
                  data / (std::string("model_4_train_") + what + ".csv"),
                  fs::copy_options::overwrite_existing);
  }
  const fs::path out = dir.path() / "rcm";
  ASSERT_EQ(run("cluster --method rcm --data " + q(data) + " --out " + q(out)), 0);
  const Json first = Json::parse(lines_of(read_text(out / "trace.jsonl")).front());
  EXPECT_EQ(first["left_members"], Json::array({2}));
  EXPECT_EQ(first["right_members"], Json::array({4}));
  EXPECT_NEAR(first["height"].get<double>(), 0.0, 1e-12);
}

TEST_F(Cli, OutputsIndependentOfThreads) {
  const fs::path cfg = config(small_experiment(6, 4));
  for (const std::string cmd : {"cluster", "curve"}) {
    const fs::path a = dir.path() / (cmd + "1"), b = dir.path() / (cmd + "4");
    ASSERT_EQ(run(cmd + " --config " + q(cfg) + " --threads 1 --out " + q(a)), 0);
    ASSERT_EQ(run(cmd + " --config " + q(cfg) + " --threads 4 --out " + q(b)), 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
      EXPECT_EQ(read_text(e.path()), read_text(b / e.path().filename())) << e.path();
      ++files;
    }
    EXPECT_GE(files, 3u);
  }
  const fs::path rcm1 = dir.path() / "r1", rcm4 = dir.path() / "r4";
  ASSERT_EQ(run("curve --method rcm --config " + q(cfg) + " --threads 1 --out " + q(rcm1)), 0);
  ASSERT_EQ(run("curve --method rcm --config " + q(cfg) + " --threads 4 --out " + q(rcm4)), 0);
  EXPECT_EQ(read_text(rcm1 / "curve_mean.csv"), read_text(rcm4 / "curve_mean.csv"));
}

TEST_F(Cli, CurveOutputs) {
  const fs::path out = dir.path() / "curve";
  ASSERT_EQ(run("curve --config " + q(config(small_experiment(4, 5))) + " --reps 2 --seed 8 --out " +
                q(out)),
            0);
  const auto mean = lines_of(read_text(out / "curve_mean.csv"));
  ASSERT_EQ(mean.size(), 5u);
  EXPECT_EQ(mean[1].substr(0, 2), "1,");
  EXPECT_TRUE(fs::exists(out / "curve_rep_0.csv"));
  EXPECT_TRUE(fs::exists(out / "curve_rep_1.csv"));
  EXPECT_FALSE(fs::exists(out / "curve_rep_2.csv"));
  const Json manifest = read_json(out / "manifest.json");
  EXPECT_EQ(manifest["replicates"], 2);
  EXPECT_EQ(manifest["succeeded"], 2);
  EXPECT_EQ(manifest["config"]["seed"], 8);

  // Replicate 0 matches an in-process run of the same seed.
  ExperimentConfig c = parse_experiment_config(small_experiment(4, 8));
  c.replicates = 2;
  const CurveResult r = run_curve(c, 1);
  EXPECT_EQ(read_text(out / "curve_rep_0.csv"), replicate_curve_csv(r.replicates[0]));
  EXPECT_EQ(read_text(out / "curve_mean.csv"), mean_curve_csv(r));
}

TEST_F(Cli, TwoModelCurve) {
  const fs::path out = dir.path() / "two";
  ASSERT_EQ(run("curve --config " + q(config(small_experiment(2, 6))) + " --out " + q(out)), 0);
  const auto mean = lines_of(read_text(out / "curve_mean.csv"));
  ASSERT_EQ(mean.size(), 3u);
  EXPECT_EQ(mean[2].substr(0, 2), "2,");
}

TEST_F(Cli, Theory) {
  const fs::path out = dir.path() / "theory";
  ASSERT_EQ(run("theory --reps 200 --seed 3 --out " + q(out)), 0);
  const Json r = read_json(out / "theory_report.json");
  for (const char* key : {"expected_R", "expected_train_error_diff", "expected_test_error_diff"}) {
    ASSERT_TRUE(r.contains(key)) << key;
    EXPECT_EQ(r[key]["replicates"], 200);
    EXPECT_TRUE(r[key]["closed_form"].is_number());
  }
  EXPECT_TRUE(r["expected_R_nonpositive"].get<bool>());
  EXPECT_EQ(run("theory --reps 50 --out " + q(out)), 2);
}

TEST_F(Cli, FeatureCounts) {
  const fs::path dry = dir.path() / "dry";
  ASSERT_EQ(run("features --synthetic-units 847 --synthetic-areas 8 --dry-run --out " + q(dry)), 0);
  const Json m = read_json(dry / "manifest.json");
  EXPECT_EQ(m["unit_columns"], 38);
  EXPECT_EQ(m["shared_columns"], 6135);
  EXPECT_TRUE(m["shared_columns_ok"].get<bool>());

  const fs::path small = dir.path() / "small";
  ASSERT_EQ(run("features --synthetic-units 2 --synthetic-areas 1 --synthetic-days 5 --T 1 --H 2 "
                "--Q 2 --L 1 --J 4 --out " +
                q(small)),
            0);
  const Json s = read_json(small / "manifest.json");
  EXPECT_EQ(s["shared_columns"], 7);
  EXPECT_EQ(s["unit_columns"], 6);
  const PanelSeries panel = synthetic_panel(2, 1, 5, 4, 0);
  const DemandModelSpec spec{1, 2, 2, 1, 4};
  EXPECT_EQ(read_matrix_csv(small / "unit_U0001_design.csv"), build_design(panel, spec, 1).design);
  EXPECT_EQ(read_matrix_csv(small / "avr_design.csv"), build_avr_design(panel, spec, {0, 1}).design);
  EXPECT_EQ(run("features --out " + q(small)), 2);
}
