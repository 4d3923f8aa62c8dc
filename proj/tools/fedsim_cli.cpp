// fedsim: run federated-learning experiments on synthetic imbalanced cohorts.
//
//   fedsim run --config exp.json [--out DIR] [--seeds 1,2,3]
//              [--strategy fedavg|fedprox|fedloss] [--setting randomly|chronologically]
//   fedsim show-config --config exp.json
//   fedsim generate-cohort --config exp.json --seed 1 --out cohort.jsonl
//   fedsim rounds-to-target --trace trace.csv --metric auc --target 0.75
//
// FEDSIM_OUTPUT_DIR overrides the config's output_dir; --out overrides both.

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "fedsim/cohort.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/experiment.hpp"

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw fedsim::ConfigError("--seeds: '" + item + "' is not a nonnegative integer");
    }
  }
  if (seeds.empty()) throw fedsim::ConfigError("--seeds: empty list");
  return seeds;
}

// Keeps the configured entries of `kind`, or adds a default one if none exist.
void restrict_strategies(fedsim::ExperimentConfig& cfg, const std::string& kind_text) {
  const auto kind = fedsim::parse_strategy_kind(kind_text);
  std::vector<fedsim::NamedStrategy> kept;
  for (const auto& s : cfg.strategies) {
    if (s.config.kind == kind) kept.push_back(s);
  }
  if (kept.empty()) {
    fedsim::NamedStrategy s;
    s.config.kind = kind;
    s.name = fedsim::to_string(kind);
    kept.push_back(s);
  }
  cfg.strategies = std::move(kept);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator for imbalanced cross-device health data"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string seeds_text;
  std::string strategy;
  std::string setting;
  auto* run = app.add_subcommand("run", "Run every (strategy, seed) pair and write traces and reports");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--seeds", seeds_text, "Comma-separated seeds, e.g. 1,2,3");
  run->add_option("--strategy", strategy, "Only run this strategy kind");
  run->add_option("--setting", setting, "randomly or chronologically");

  auto* show = app.add_subcommand("show-config", "Print the config with every default filled in");
  show->add_option("--config", config_path, "Experiment config (JSON)")->required();

  std::uint64_t cohort_seed = 1;
  std::string cohort_out;
  auto* gen = app.add_subcommand("generate-cohort", "Write the cohort for one seed as JSON lines");
  gen->add_option("--config", config_path, "Experiment config (JSON)")->required();
  gen->add_option("--seed", cohort_seed, "Experiment seed");
  gen->add_option("--out", cohort_out, "Output file")->required();

  std::string trace_path;
  std::string metric = "auc";
  double target = 0.0;
  auto* rtt = app.add_subcommand("rounds-to-target", "First evaluation round reaching a metric value");
  rtt->add_option("--trace", trace_path, "Trace CSV")->required();
  rtt->add_option("--metric", metric, "Metric column");
  rtt->add_option("--target", target, "Target value")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto cfg = fedsim::parse_config(config_path);
      if (const char* env = std::getenv("FEDSIM_OUTPUT_DIR"); env && *env) cfg.output_dir = env;
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (!seeds_text.empty()) cfg.seeds = parse_seed_list(seeds_text);
      if (!strategy.empty()) restrict_strategies(cfg, strategy);
      if (!setting.empty()) cfg.setting = fedsim::parse_setting(setting);
      const auto summary = fedsim::run_experiment(cfg, &std::cerr);
      std::cerr << "wrote " << summary.files.size() << " files to " << cfg.output_dir.string() << "\n";
      return summary.exit_code;
    }
    if (*show) {
      std::cout << fedsim::serialize_config(fedsim::parse_config(config_path));
      return 0;
    }
    if (*gen) {
      const auto cfg = fedsim::parse_config(config_path);
      auto cohort_cfg = cfg.cohort;
      cohort_cfg.seed = fedsim::plan_seeds(cohort_seed).cohort;
      fedsim::save_cohort(cohort_out, fedsim::generate_cohort(cohort_cfg));
      return 0;
    }
    if (*rtt) {
      const auto round = fedsim::rounds_to_target(trace_path, metric, target);
      if (round) {
        std::cout << *round << "\n";
      } else {
        std::cout << "none\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
