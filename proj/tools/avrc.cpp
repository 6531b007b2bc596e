// avrc: command-line harness for aggregate value regression with clustering.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "avrc/experiment.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string method;
  std::string ward;
  std::optional<std::size_t> reps;
  std::string out;
  int threads = 0;
  std::string test_predictors;
  std::string data;
};

avrc::ExperimentConfig experiment_config(const CommonFlags& f) {
  avrc::ExperimentConfig c;
  if (!f.config.empty()) c = avrc::parse_experiment_config(avrc::read_json(f.config));
  if (f.seed) c.seed = *f.seed;
  if (!f.method.empty()) c.method = avrc::parse_method(f.method);
  if (!f.ward.empty()) c.ward = avrc::parse_ward(f.ward);
  if (f.reps) {
    if (*f.reps < 1) throw avrc::ConfigError("--reps must be >= 1");
    c.replicates = *f.reps;
  }
  if (!f.test_predictors.empty()) c.synth.test_predictors = avrc::parse_test_predictors(f.test_predictors);
  if (!f.data.empty()) c.dataset = f.data;
  return c;
}

int cmd_simulate(const CommonFlags& f) {
  avrc::ExperimentConfig c = experiment_config(f);
  avrc::SynthConfig sc = c.synth;
  sc.seed = c.seed;
  const avrc::SynthDataset ds = avrc::generate(sc);
  avrc::write_dataset(f.out, ds, avrc::experiment_json(c));
  std::cout << "wrote " << ds.train.size() << " models to " << f.out << "\n";
  return 0;
}

int cmd_cluster(const CommonFlags& f) {
  const avrc::ExperimentConfig c = experiment_config(f);
  const unsigned threads = avrc::resolve_threads(f.threads);
  avrc::Dataset ds;
  if (c.dataset) {
    ds = avrc::load_dataset(*c.dataset);
  } else {
    avrc::SynthConfig sc = c.synth;
    sc.seed = c.seed;
    ds = avrc::to_dataset(avrc::generate(sc));
  }
  const avrc::MergeTrace trace = avrc::cluster_models(ds.train, c.method, c.ward, threads);
  avrc::write_cluster_outputs(f.out, trace, ds.train, avrc::experiment_json(c));
  for (const auto& w : trace.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << avrc::to_string(c.method) << ": " << trace.steps.size() << " merges written to "
            << f.out << "\n";
  return 0;
}

int cmd_curve(const CommonFlags& f) {
  const avrc::ExperimentConfig c = experiment_config(f);
  const unsigned threads = avrc::resolve_threads(f.threads);
  const avrc::CurveResult result = avrc::run_curve(c, threads);
  avrc::write_curve_outputs(f.out, result, c);
  std::size_t failed = 0;
  for (const auto& rc : result.replicates) {
    if (rc.failure) {
      ++failed;
      std::cerr << "replicate " << rc.replicate << " failed: " << *rc.failure << "\n";
    }
  }
  std::cout << "replicates: " << result.replicates.size() - failed << " ok, " << failed
            << " failed\n";
  if (result.argmin_test_k) std::cout << "argmin test MSE at k = " << *result.argmin_test_k << "\n";
  if (failed == result.replicates.size()) return kExitNumerical;
  return 0;
}

int cmd_theory(const CommonFlags& f) {
  avrc::TheoryConfig c;
  if (!f.config.empty()) {
    c = avrc::parse_theory_config(avrc::read_json(f.config));
  } else {
    c.instance_echo = avrc::Json::object({{"kind", "random"}});
    c.instance = avrc::parse_instance(c.instance_echo);
  }
  if (f.seed) c.seed = *f.seed;
  if (f.reps) c.replicates = *f.reps;
  if (c.replicates < 100) throw avrc::ConfigError("theory needs at least 100 replicates");
  const avrc::Json report = avrc::run_theory(c, avrc::resolve_threads(f.threads));
  fs::create_directories(f.out);
  avrc::write_json(fs::path(f.out) / "theory_report.json", report);
  for (const char* key : {"expected_R", "expected_train_error_diff", "expected_test_error_diff"}) {
    std::cout << key << ": closed form " << report[key]["closed_form"].dump() << ", z "
              << report[key]["z_score"].dump() << "\n";
  }
  return 0;
}

struct FeatureFlags {
  std::string demand, weather, units, holidays;
  std::size_t synthetic_units = 0, synthetic_areas = 1, synthetic_days = 30;
  avrc::DemandModelSpec spec;
  bool dry_run = false;
};

int cmd_features(const FeatureFlags& ff, const CommonFlags& f) {
  avrc::PanelSeries panel;
  if (ff.synthetic_units > 0) {
    const std::size_t days = ff.dry_run ? std::size_t{1} : ff.synthetic_days;
    panel = avrc::synthetic_panel(ff.synthetic_units, ff.synthetic_areas, days,
                                  ff.spec.intervals, f.seed.value_or(0));
  } else {
    if (ff.demand.empty() || ff.weather.empty() || ff.units.empty()) {
      throw avrc::ConfigError("features: --demand, --weather and --units are required "
                              "(or --synthetic-units)");
    }
    panel = avrc::load_panel(ff.demand, ff.weather, ff.units,
                             ff.holidays.empty() ? std::nullopt
                                                 : std::optional<std::string>(ff.holidays));
  }
  const avrc::Json manifest = avrc::run_features(panel, ff.spec, f.out, ff.dry_run);
  std::cout << "per-unit columns " << manifest["unit_columns"] << " (expected "
            << manifest["expected_unit_columns"] << "), shared AVR columns "
            << manifest["shared_columns"] << " (expected " << manifest["expected_shared_columns"]
            << ")\n";
  const bool ok = manifest["unit_columns_ok"].get<bool>() && manifest["shared_columns_ok"].get<bool>();
  return ok ? 0 : kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aggregate value regression with clustering"};
  app.require_subcommand(1);

  CommonFlags f;
  FeatureFlags ff;
  auto add_common = [&](CLI::App* sub, bool clustering) {
    sub->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "Base seed (overrides the config)");
    sub->add_option("--out", f.out, "Output directory")->required();
    sub->add_option("--threads", f.threads,
                    "Worker threads (default: AVRC_THREADS, then 1); never changes output");
    if (clustering) {
      sub->add_option("--method", f.method, "Clustering method")
          ->check(CLI::IsMember({"tem", "rcm"}));
      sub->add_option("--ward", f.ward, "Ward convention for rcm")
          ->check(CLI::IsMember({"ward.D", "ward.D2"}));
      sub->add_option("--data", f.data, "Dataset directory written by 'simulate'")
          ->check(CLI::ExistingDirectory);
    }
  };

  CLI::App* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset");
  add_common(simulate, false);
  simulate->add_option("--test-predictors", f.test_predictors, "fresh or shared")
      ->check(CLI::IsMember({"fresh", "shared"}));

  CLI::App* cluster = app.add_subcommand("cluster", "Build a merge trace and dendrogram table");
  add_common(cluster, true);

  CLI::App* curve = app.add_subcommand("curve", "Training and test error for every k");
  add_common(curve, true);
  curve->add_option("--reps", f.reps, "Replicate count");
  curve->add_option("--test-predictors", f.test_predictors, "fresh or shared")
      ->check(CLI::IsMember({"fresh", "shared"}));

  CLI::App* theory = app.add_subcommand("theory", "Closed forms versus Monte Carlo");
  add_common(theory, false);
  theory->add_option("--reps", f.reps, "Monte Carlo replicates");

  CLI::App* features = app.add_subcommand("features", "Build demand-model design matrices");
  add_common(features, false);
  features->add_option("--demand", ff.demand, "CSV: date,interval,unit_id,value");
  features->add_option("--weather", ff.weather, "CSV: date,area,temperature");
  features->add_option("--units", ff.units, "CSV: unit_id,area,category");
  features->add_option("--holidays", ff.holidays, "CSV: date");
  features->add_option("--synthetic-units", ff.synthetic_units, "Use a generated panel");
  features->add_option("--synthetic-areas", ff.synthetic_areas, "Areas of the generated panel");
  features->add_option("--synthetic-days", ff.synthetic_days, "Days of the generated panel");
  features->add_option("--T", ff.spec.lags, "Lag days");
  features->add_option("--H", ff.spec.temperature_bases, "Temperature basis count");
  features->add_option("--Q", ff.spec.cyclic_bases, "Cyclic basis count");
  features->add_option("--L", ff.spec.weekday_dummies, "Weekday dummies");
  features->add_option("--J", ff.spec.intervals, "Intervals per day");
  features->add_flag("--dry-run", ff.dry_run, "Count columns without building designs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*simulate) return cmd_simulate(f);
    if (*cluster) return cmd_cluster(f);
    if (*curve) return cmd_curve(f);
    if (*theory) return cmd_theory(f);
    if (*features) return cmd_features(ff, f);
  } catch (const avrc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const avrc::InvalidData& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const avrc::ContractViolation& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const avrc::RankDeficiency& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const avrc::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const avrc::Json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
