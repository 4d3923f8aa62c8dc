#include "fedsim/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fedsim/errors.hpp"
#include "fedsim/metrics.hpp"

namespace fedsim {

using nlohmann::json;

std::string to_string(Setting setting) {
  return setting == Setting::Randomly ? "randomly" : "chronologically";
}

Setting parse_setting(const std::string& text) {
  if (text == "randomly") return Setting::Randomly;
  if (text == "chronologically") return Setting::Chronologically;
  throw ConfigError("setting: expected 'randomly' or 'chronologically', got '" + text + "'");
}

namespace {

std::string to_string(BootstrapUnit unit) { return unit == BootstrapUnit::Sample ? "sample" : "user"; }

BootstrapUnit parse_unit(const std::string& text) {
  if (text == "sample") return BootstrapUnit::Sample;
  if (text == "user") return BootstrapUnit::User;
  throw ConfigError("bootstrap.unit: expected 'sample' or 'user', got '" + text + "'");
}

// Reads keys from one JSON object, remembering which were used so leftovers
// can be reported as unknown. Every error names the full key path.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(label("") + ": expected an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    used_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(label(key) + ": wrong value type");
    }
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json* child(const std::string& key) {
    const auto it = obj_.find(key);
    if (it == obj_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  std::string label(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void reject_unknown() const {
    for (const auto& [key, _] : obj_.items()) {
      if (!used_.count(key)) throw ConfigError(label(key) + ": unknown key");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> used_;
};

void read_counts(const json& j, const std::string& path, SampleCountDistribution& d) {
  ObjectReader r(j, path);
  r.read("p_single", d.p_single);
  r.read("tail_p", d.tail_p);
  r.read("max_samples", d.max_samples);
  r.reject_unknown();
}

json counts_json(const SampleCountDistribution& d) {
  return {{"p_single", d.p_single}, {"tail_p", d.tail_p}, {"max_samples", d.max_samples}};
}

// Validation errors from nested types are re-raised with the key path.
template <typename Fn>
void validate_under(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

StrategyConfig read_strategy(const json& j, const std::string& path, std::string& name) {
  ObjectReader r(j, path);
  StrategyConfig s;
  std::string kind;
  if (!r.has("kind")) throw ConfigError(path + ".kind: missing");
  r.read("kind", kind);
  try {
    s.kind = parse_strategy_kind(kind);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ".kind: " + e.what());
  }
  name = to_string(s.kind);
  r.read("name", name);
  r.read("mu", s.mu);
  r.read("eta", s.eta);
  r.read("lr", s.lr);
  r.read("E", s.epochs);
  r.read("M", s.clients_per_round);
  std::string mode = to_string(s.loss_mode);
  r.read("loss_mode", mode);
  try {
    s.loss_mode = parse_loss_mode(mode);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ".loss_mode: " + e.what());
  }
  r.reject_unknown();

  if (s.clients_per_round < 1) throw ConfigError(path + ".M: must be >= 1");
  if (s.epochs < 1) throw ConfigError(path + ".E: must be >= 1");
  if (!(s.lr > 0.0)) throw ConfigError(path + ".lr: must be > 0");
  if (!(s.eta > 0.0)) throw ConfigError(path + ".eta: must be > 0");
  if (!(s.mu >= 0.0)) throw ConfigError(path + ".mu: must be >= 0");
  if (r.has("mu") && s.kind != StrategyKind::FedProx) {
    throw ConfigError(path + ".mu: only valid for kind fedprox");
  }
  return s;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (strategies.empty()) throw ConfigError("strategies: at least one strategy is required");
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  std::set<std::string> names;
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    const auto path = "strategies[" + std::to_string(i) + "]";
    validate_under(path, [&] { strategies[i].config.validate(); });
    if (strategies[i].name.empty()) throw ConfigError(path + ".name: must not be empty");
    if (!names.insert(strategies[i].name).second) {
      throw ConfigError(path + ".name: duplicate strategy name '" + strategies[i].name + "'");
    }
  }
  if (setting == Setting::Randomly && rounds < 0) throw ConfigError("rounds: must be >= 0");
  if (setting == Setting::Chronologically && rounds_per_month < 1) {
    throw ConfigError("rounds_per_month: must be >= 1");
  }
  if (eval_every < 1) throw ConfigError("eval_every: must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction: must be in (0,1)");
  if (threads < 1) throw ConfigError("threads: must be >= 1");
  if (bootstrap_resamples < 1) throw ConfigError("bootstrap.resamples: must be >= 1");
  if (!(bootstrap_level > 0.0 && bootstrap_level < 1.0)) throw ConfigError("bootstrap.level: must be in (0,1)");
  validate_under("model", [&] {
    try {
      model.validate();
    } catch (const ShapeError& e) {
      throw ConfigError(e.what());
    }
  });
  if (cohort.features.embed_dim != model.embed_dim || cohort.features.symptom_dim != model.symptom_dim) {
    throw ConfigError("cohort.features: dimensions must match model.embed_dim/model.symptom_dim");
  }
  validate_under("cohort", [&] { cohort.validate(); });
}

ExperimentConfig parse_config_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }

  ExperimentConfig cfg;
  ObjectReader r(root, "");

  std::string setting = to_string(cfg.setting);
  r.read("setting", setting);
  cfg.setting = parse_setting(setting);
  r.read("rounds", cfg.rounds);
  r.read("rounds_per_month", cfg.rounds_per_month);
  r.read("eval_every", cfg.eval_every);
  r.read("seeds", cfg.seeds);
  std::string out_dir = cfg.output_dir.string();
  r.read("output_dir", out_dir);
  cfg.output_dir = out_dir;
  r.read("test_fraction", cfg.test_fraction);
  r.read("threads", cfg.threads);

  if (const auto* b = r.child("bootstrap")) {
    ObjectReader br(*b, "bootstrap");
    br.read("resamples", cfg.bootstrap_resamples);
    br.read("level", cfg.bootstrap_level);
    std::string unit = to_string(cfg.bootstrap_unit);
    br.read("unit", unit);
    cfg.bootstrap_unit = parse_unit(unit);
    br.reject_unknown();
  }

  if (const auto* m = r.child("model")) {
    ObjectReader mr(*m, "model");
    mr.read("embed_dim", cfg.model.embed_dim);
    mr.read("symptom_dim", cfg.model.symptom_dim);
    mr.read("hidden_dims", cfg.model.hidden_dims);
    mr.reject_unknown();
  }
  cfg.cohort.features = FeatureModel::defaults(cfg.model.embed_dim, cfg.model.symptom_dim);

  if (const auto* c = r.child("cohort")) {
    ObjectReader cr(*c, "cohort");
    cr.read("n_positive_clients", cfg.cohort.n_positive_clients);
    cr.read("n_negative_clients", cfg.cohort.n_negative_clients);
    cr.read("n_months", cfg.cohort.n_months);
    cr.read("monthly_arrival_weights", cfg.cohort.monthly_arrival_weights);
    cr.read("mixed_class_fraction", cfg.cohort.mixed_class_fraction);
    if (const auto* s = cr.child("samples_per_client")) {
      read_counts(*s, "cohort.samples_per_client", cfg.cohort.counts_neg);
      cfg.cohort.counts_pos = cfg.cohort.counts_neg;
    }
    if (const auto* s = cr.child("samples_per_client_pos")) {
      read_counts(*s, "cohort.samples_per_client_pos", cfg.cohort.counts_pos);
    }
    if (const auto* f = cr.child("features")) {
      ObjectReader fr(*f, "cohort.features");
      auto& fm = cfg.cohort.features;
      fr.read("separability", fm.separability);
      fr.read("mean_neg", fm.mean_neg);
      fr.read("mean_pos", fm.mean_pos);
      fr.read("stddev", fm.stddev);
      fr.read("symptom_prob_neg", fm.symptom_prob_neg);
      fr.read("symptom_prob_pos", fm.symptom_prob_pos);
      fr.reject_unknown();
    }
    cr.reject_unknown();
  }

  if (const auto* s = r.child("strategies")) {
    if (!s->is_array()) throw ConfigError("strategies: expected an array");
    for (std::size_t i = 0; i < s->size(); ++i) {
      NamedStrategy ns;
      ns.config = read_strategy((*s)[i], "strategies[" + std::to_string(i) + "]", ns.name);
      cfg.strategies.push_back(std::move(ns));
    }
  }
  r.reject_unknown();
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  json strategies = json::array();
  for (const auto& s : cfg.strategies) {
    json j{{"name", s.name},
           {"kind", to_string(s.config.kind)},
           {"eta", s.config.eta},
           {"lr", s.config.lr},
           {"E", s.config.epochs},
           {"M", s.config.clients_per_round},
           {"loss_mode", to_string(s.config.loss_mode)}};
    if (s.config.kind == StrategyKind::FedProx) j["mu"] = s.config.mu;
    strategies.push_back(std::move(j));
  }
  const auto& fm = cfg.cohort.features;
  json root{
      {"setting", to_string(cfg.setting)},
      {"rounds", cfg.rounds},
      {"rounds_per_month", cfg.rounds_per_month},
      {"eval_every", cfg.eval_every},
      {"seeds", cfg.seeds},
      {"output_dir", cfg.output_dir.string()},
      {"test_fraction", cfg.test_fraction},
      {"threads", cfg.threads},
      {"bootstrap",
       {{"resamples", cfg.bootstrap_resamples},
        {"level", cfg.bootstrap_level},
        {"unit", to_string(cfg.bootstrap_unit)}}},
      {"model",
       {{"embed_dim", cfg.model.embed_dim},
        {"symptom_dim", cfg.model.symptom_dim},
        {"hidden_dims", cfg.model.hidden_dims}}},
      {"cohort",
       {{"n_positive_clients", cfg.cohort.n_positive_clients},
        {"n_negative_clients", cfg.cohort.n_negative_clients},
        {"n_months", cfg.cohort.n_months},
        {"monthly_arrival_weights", cfg.cohort.monthly_arrival_weights},
        {"mixed_class_fraction", cfg.cohort.mixed_class_fraction},
        {"samples_per_client", counts_json(cfg.cohort.counts_neg)},
        {"samples_per_client_pos", counts_json(cfg.cohort.counts_pos)},
        {"features",
         {{"separability", fm.separability},
          {"mean_neg", fm.mean_neg},
          {"mean_pos", fm.mean_pos},
          {"stddev", fm.stddev},
          {"symptom_prob_neg", fm.symptom_prob_neg},
          {"symptom_prob_pos", fm.symptom_prob_pos}}}}},
      {"strategies", std::move(strategies)},
  };
  return root.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

SeedPlan plan_seeds(std::uint64_t seed) {
  return {derive_seed(seed, 0), derive_seed(seed, 1), derive_seed(seed, 2), derive_seed(seed, 3),
          derive_seed(seed, 4)};
}

CohortSplit build_split(const ExperimentConfig& config, std::uint64_t seed) {
  const auto plan = plan_seeds(seed);
  auto cohort_cfg = config.cohort;
  cohort_cfg.seed = plan.cohort;
  return split_clients(generate_cohort(cohort_cfg), config.test_fraction, plan.split);
}

RunOutput run_single(const ExperimentConfig& config, const NamedStrategy& strategy,
                     std::uint64_t seed, const CohortSplit& split) {
  const auto plan = plan_seeds(seed);
  const auto initial = init_params(config.model, plan.init);
  const ExecutionOptions exec{config.threads};

  RunOutput out;
  out.strategy = strategy.name;
  out.seed = seed;
  if (config.setting == Setting::Randomly) {
    out.run = run_random_setting(split, initial, strategy.config, config.rounds, config.eval_every,
                                 plan.selection, exec);
  } else {
    out.run = run_chronological_setting(split, initial, strategy.config, config.cohort.n_months,
                                        config.rounds_per_month, plan.selection, exec);
  }

  const auto scored = score_clients(out.run.final_model, split.test_clients);
  BootstrapOptions opts;
  opts.n_resamples = config.bootstrap_resamples;
  opts.level = config.bootstrap_level;
  opts.seed = plan.bootstrap;
  if (config.bootstrap_unit == BootstrapUnit::Sample) {
    out.final_report = full_report(scored, opts);
  } else {
    out.final_report = point_metrics(scored);
    std::vector<std::vector<std::size_t>> groups;
    std::size_t next = 0;
    for (const auto& c : split.test_clients) {
      std::vector<std::size_t> g(c.samples.size());
      for (auto& idx : g) idx = next++;
      groups.push_back(std::move(g));
    }
    std::uint64_t stream = 0;
    for (const char* name : {"auc", "se", "sp", "se_at_80sp"}) {
      auto o = opts;
      o.seed = derive_seed(opts.seed, stream++);
      out.final_report.ci[name] = bootstrap_ci_grouped(scored, groups, metric_by_name(name), o);
    }
  }
  return out;
}

void write_weight_trace_csv(std::ostream& out, const std::vector<RunOutput>& runs, bool with_header) {
  if (with_header) out << kWeightTraceHeader << '\n';
  char buf[32];
  auto number = [&](double v) -> const char* {
    if (std::isnan(v)) return "";
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
  };
  for (const auto& r : runs) {
    for (const auto& log : r.run.history) {
      out << r.seed << ',' << r.strategy << ',' << log.round << ',' << log.month << ',';
      out << number(log.mean_weight_pos) << ',';
      out << number(log.mean_weight_neg) << '\n';
    }
  }
}

namespace {

std::string run_stem(const std::string& strategy, std::uint64_t seed) {
  return strategy + "_seed" + std::to_string(seed);
}

void write_file(const std::filesystem::path& path, const std::string& content,
                std::vector<std::filesystem::path>& files) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << content;
  files.push_back(path);
}

std::string summary_text(const ExperimentConfig& config, const std::vector<RunOutput>& runs,
                         const std::vector<std::string>& failures) {
  std::ostringstream out;
  out << "setting: " << to_string(config.setting) << "\n";
  out << "seeds: " << config.seeds.size() << "\n";
  const bool by_bootstrap = config.seeds.size() >= 5;
  out << (by_bootstrap ? "intervals: percentile bootstrap over seeds\n"
                       : "intervals: min-max over seeds (fewer than 5 seeds, no bootstrap)\n");
  out << "\n";

  std::vector<std::pair<std::string, MetricsReport>> rows;
  for (const auto& s : config.strategies) {
    std::vector<double> auc, se, sp, se80;
    for (const auto& r : runs) {
      if (r.strategy != s.name) continue;
      auc.push_back(r.final_report.auc);
      se.push_back(r.final_report.se);
      sp.push_back(r.final_report.sp);
      se80.push_back(r.final_report.se_at_80sp);
    }
    if (auc.empty()) continue;
    MetricsReport row;
    auto mean = [](const std::vector<double>& v) {
      double sum = 0.0;
      for (double x : v) sum += x;
      return sum / static_cast<double>(v.size());
    };
    row.auc = mean(auc);
    row.se = mean(se);
    row.sp = mean(sp);
    row.se_at_80sp = mean(se80);
    std::uint64_t stream = 0;
    for (const auto& [key, values] : {std::pair{"auc", &auc}, std::pair{"se", &se},
                                      std::pair{"sp", &sp}, std::pair{"se_at_80sp", &se80}}) {
      if (by_bootstrap) {
        BootstrapOptions o;
        o.n_resamples = config.bootstrap_resamples;
        o.level = config.bootstrap_level;
        o.seed = derive_seed(0x5EED5, stream++);
        row.ci[key] = bootstrap_mean_ci(*values, o);
      } else {
        const auto [lo, hi] = std::minmax_element(values->begin(), values->end());
        row.ci[key] = {*lo, *hi};
      }
    }
    rows.emplace_back(s.name, std::move(row));
  }
  out << format_table(rows);
  if (!failures.empty()) {
    out << "\nINCOMPLETE: " << failures.size() << " run(s) failed\n";
    for (const auto& f : failures) out << "  " << f << "\n";
  }
  return out.str();
}

}  // namespace

ExperimentSummary run_experiment(const ExperimentConfig& config, std::ostream* log) {
  config.validate();
  ExperimentSummary summary;
  std::filesystem::create_directories(config.output_dir);

  std::vector<RunOutput> runs;
  for (const auto seed : config.seeds) {
    CohortSplit split;
    try {
      split = build_split(config, seed);
    } catch (const std::exception& e) {
      for (const auto& s : config.strategies) {
        const auto msg = run_stem(s.name, seed) + ": " + e.what();
        summary.failures.push_back(msg);
        write_file(config.output_dir / ("failed_" + run_stem(s.name, seed) + ".txt"), msg + "\n",
                   summary.files);
      }
      continue;
    }
    for (const auto& strategy : config.strategies) {
      const auto stem = run_stem(strategy.name, seed);
      try {
        auto out = run_single(config, strategy, seed, split);
        for (const auto& notice : out.run.notices) {
          if (log) *log << stem << ": " << notice << "\n";
        }

        std::ostringstream trace;
        write_trace_csv(trace, out.run.history, strategy.name);
        write_file(config.output_dir / ("trace_" + stem + ".csv"), trace.str(), summary.files);
        write_file(config.output_dir / ("report_" + stem + ".txt"),
                   format_table({{strategy.name, out.final_report}}) + "tau: " +
                       std::to_string(out.final_report.tau) + "\n",
                   summary.files);
        if (log) {
          *log << stem << ": auc " << out.final_report.auc << " se " << out.final_report.se << " sp "
               << out.final_report.sp << "\n";
        }
        runs.push_back(std::move(out));
      } catch (const std::exception& e) {
        const auto msg = stem + ": " + e.what();
        summary.failures.push_back(msg);
        write_file(config.output_dir / ("failed_" + stem + ".txt"), msg + "\n", summary.files);
        if (log) *log << "FAILED " << msg << "\n";
      }
    }
  }

  std::ostringstream weights;
  write_weight_trace_csv(weights, runs);
  write_file(config.output_dir / "weights.csv", weights.str(), summary.files);
  write_file(config.output_dir / "summary.txt", summary_text(config, runs, summary.failures),
             summary.files);
  summary.exit_code = summary.failures.empty() ? 0 : 1;
  return summary;
}

// ---------------------------------------------------------------------------

std::optional<int> rounds_to_target(std::istream& in, const std::string& metric, double target) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("trace: empty file");
  auto split_csv = [](const std::string& text) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(text);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!text.empty() && text.back() == ',') fields.emplace_back();
    return fields;
  };
  const auto header = split_csv(line);
  const auto round_col = std::find(header.begin(), header.end(), "round");
  const auto metric_col = std::find(header.begin(), header.end(), metric);
  if (round_col == header.end()) throw FormatError("trace: no 'round' column");
  if (metric_col == header.end() || metric == "round" || metric == "strategy") {
    throw ConfigError("unknown metric '" + metric + "'");
  }
  const auto ri = static_cast<std::size_t>(round_col - header.begin());
  const auto mi = static_cast<std::size_t>(metric_col - header.begin());

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw FormatError("trace line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields");
    }
    if (fields[mi].empty()) continue;
    try {
      if (std::stod(fields[mi]) >= target) return std::stoi(fields[ri]);
    } catch (const std::logic_error&) {
      throw FormatError("trace line " + std::to_string(line_no) + ": not a number");
    }
  }
  return std::nullopt;
}

std::optional<int> rounds_to_target(const std::filesystem::path& trace_csv, const std::string& metric,
                                    double target) {
  std::ifstream in(trace_csv);
  if (!in) throw FormatError("cannot open " + trace_csv.string());
  return rounds_to_target(in, metric, target);
}

}  // namespace fedsim
