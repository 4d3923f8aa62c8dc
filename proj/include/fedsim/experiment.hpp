#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/cohort.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/numerics.hpp"

namespace fedsim {

enum class Setting { Randomly, Chronologically };
enum class BootstrapUnit { Sample, User };

std::string to_string(Setting setting);
Setting parse_setting(const std::string& text);

struct NamedStrategy {
  std::string name;  // file-name label; defaults to the kind
  StrategyConfig config;
  bool operator==(const NamedStrategy&) const = default;
};

struct ExperimentConfig {
  CohortConfig cohort;
  ModelSpec model;
  std::vector<NamedStrategy> strategies;
  Setting setting = Setting::Randomly;
  int rounds = 2000;           // randomly
  int rounds_per_month = 100;  // chronologically
  int eval_every = 10;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "results";
  double test_fraction = 0.2;
  int threads = 1;
  int bootstrap_resamples = 1000;
  double bootstrap_level = 0.95;
  BootstrapUnit bootstrap_unit = BootstrapUnit::Sample;

  /// Throws ConfigError naming the offending key.
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Parses JSON text; unknown keys and invalid values throw ConfigError
/// naming the key. Omitted keys take their defaults.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Fully explicit JSON, accepted back by parse_config_text.
std::string serialize_config(const ExperimentConfig& config);

/// Per-seed stream seeds; every strategy of a seed shares them.
struct SeedPlan {
  std::uint64_t cohort = 0;
  std::uint64_t split = 0;
  std::uint64_t init = 0;
  std::uint64_t selection = 0;
  std::uint64_t bootstrap = 0;
};
SeedPlan plan_seeds(std::uint64_t seed);

/// Everything produced by one (strategy, seed) run.
struct RunOutput {
  std::string strategy;
  std::uint64_t seed = 0;
  RunResult run;
  MetricsReport final_report;
};

/// Runs one (strategy, seed) pair on the shared cohort for that seed.
RunOutput run_single(const ExperimentConfig& config, const NamedStrategy& strategy,
                     std::uint64_t seed, const CohortSplit& split);

/// Builds the cohort for `seed` and splits it.
CohortSplit build_split(const ExperimentConfig& config, std::uint64_t seed);

struct ExperimentSummary {
  int exit_code = 0;
  std::vector<std::filesystem::path> files;
  std::vector<std::string> failures;
};

/// Runs every (strategy, seed) pair and writes, under output_dir:
///   trace_<strategy>_seed<s>.csv   evaluation snapshots
///   report_<strategy>_seed<s>.txt  final metrics with bootstrap CIs
///   weights.csv                    per-round mean weights by class
///   summary.txt                    per-strategy means and CIs across seeds
/// A failed run writes failed_<strategy>_seed<s>.txt and makes exit_code 1.
ExperimentSummary run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

inline const char* kWeightTraceHeader = "seed,strategy,round,month,mean_weight_pos,mean_weight_neg";

void write_weight_trace_csv(std::ostream& out, const std::vector<RunOutput>& runs,
                            bool with_header = true);

/// First evaluation round whose `metric` column reaches `target`.
/// Throws ConfigError for an unknown column, FormatError for a malformed file.
std::optional<int> rounds_to_target(std::istream& trace_csv, const std::string& metric, double target);
std::optional<int> rounds_to_target(const std::filesystem::path& trace_csv, const std::string& metric,
                                    double target);

}  // namespace fedsim
