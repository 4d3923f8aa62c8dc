#include "fedsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

struct ClassCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

ClassCounts count_classes(std::span<const ScoredSample> scored) {
  ClassCounts c;
  for (const auto& s : scored) (s.label == 1 ? c.pos : c.neg)++;
  return c;
}

ClassCounts require_both_classes(std::span<const ScoredSample> scored, const char* what) {
  const auto c = count_classes(scored);
  if (c.pos == 0 || c.neg == 0) {
    throw UndefinedMetric(std::string(what) + " needs both classes (positives=" +
                          std::to_string(c.pos) + ", negatives=" + std::to_string(c.neg) + ")");
  }
  return c;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double auc_roc(std::span<const ScoredSample> scored) {
  const auto counts = require_both_classes(scored, "auc_roc");
  std::vector<std::pair<double, int>> by_score;
  by_score.reserve(scored.size());
  for (const auto& s : scored) by_score.emplace_back(s.p_pos, s.label);
  std::sort(by_score.begin(), by_score.end());

  // Walk tie groups in ascending score; every positive beats the negatives
  // strictly below and splits the tied ones.
  double wins = 0.0;
  std::size_t neg_below = 0;
  for (std::size_t i = 0; i < by_score.size();) {
    std::size_t j = i;
    std::size_t pos_here = 0;
    std::size_t neg_here = 0;
    while (j < by_score.size() && by_score[j].first == by_score[i].first) {
      (by_score[j].second == 1 ? pos_here : neg_here)++;
      ++j;
    }
    wins += static_cast<double>(pos_here * neg_below) +
            0.5 * static_cast<double>(pos_here * neg_here);
    neg_below += neg_here;
    i = j;
  }
  return wins / (static_cast<double>(counts.pos) * static_cast<double>(counts.neg));
}

SeSp se_sp_at_tau(std::span<const ScoredSample> scored, double tau) {
  const auto counts = require_both_classes(scored, "se_sp_at_tau");
  std::size_t tp = 0;
  std::size_t tn = 0;
  for (const auto& s : scored) {
    const bool predicted_pos = s.margin() > tau;
    if (s.label == 1 && predicted_pos) ++tp;
    if (s.label == 0 && !predicted_pos) ++tn;
  }
  return {static_cast<double>(tp) / static_cast<double>(counts.pos),
          static_cast<double>(tn) / static_cast<double>(counts.neg)};
}

std::vector<double> candidate_thresholds(std::span<const ScoredSample> scored) {
  std::vector<double> taus{-1.0, 1.0};
  taus.reserve(scored.size() + 2);
  for (const auto& s : scored) taus.push_back(s.margin());
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  return taus;
}

ThresholdResult se_at_target_sp(std::span<const ScoredSample> scored, double target_sp) {
  const auto counts = require_both_classes(scored, "se_at_target_sp");
  std::vector<double> neg_margins;
  std::vector<double> pos_margins;
  neg_margins.reserve(counts.neg);
  pos_margins.reserve(counts.pos);
  for (const auto& s : scored) (s.label == 1 ? pos_margins : neg_margins).push_back(s.margin());
  std::sort(neg_margins.begin(), neg_margins.end());
  std::sort(pos_margins.begin(), pos_margins.end());

  const auto n_neg = static_cast<double>(counts.neg);
  const auto n_pos = static_cast<double>(counts.pos);
  for (double tau : candidate_thresholds(scored)) {
    const auto tn = std::upper_bound(neg_margins.begin(), neg_margins.end(), tau) -
                    neg_margins.begin();
    if (static_cast<double>(tn) / n_neg >= target_sp) {
      const auto fn = std::upper_bound(pos_margins.begin(), pos_margins.end(), tau) -
                      pos_margins.begin();
      return {(n_pos - static_cast<double>(fn)) / n_pos, tau};
    }
  }
  // Unreachable: the largest candidate classifies every negative correctly.
  throw UndefinedMetric("se_at_target_sp: target specificity unreachable");
}

MetricFn metric_by_name(const std::string& name) {
  if (name == "auc") return [](std::span<const ScoredSample> s) { return auc_roc(s); };
  if (name == "se") return [](std::span<const ScoredSample> s) { return se_sp_at_tau(s, 0.0).se; };
  if (name == "sp") return [](std::span<const ScoredSample> s) { return se_sp_at_tau(s, 0.0).sp; };
  if (name == "se_at_80sp") {
    return [](std::span<const ScoredSample> s) { return se_at_target_sp(s, 0.8).se; };
  }
  throw ConfigError("unknown metric '" + name + "'");
}

double quantile(std::vector<double>& values, double q) {
  if (values.empty()) throw UndefinedMetric("quantile of empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return values[lo];
  return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

ConfidenceInterval percentile_interval(std::vector<double> stats, double level) {
  const double alpha = (1.0 - level) / 2.0;
  ConfidenceInterval ci;
  ci.low = quantile(stats, alpha);
  ci.high = quantile(stats, 1.0 - alpha);
  return ci;
}

void check_options(const BootstrapOptions& opts) {
  if (opts.n_resamples < 1) throw ConfigError("bootstrap: n_resamples must be >= 1");
  if (!(opts.level > 0.0 && opts.level < 1.0)) throw ConfigError("bootstrap: level must be in (0,1)");
}

}  // namespace

ConfidenceInterval bootstrap_ci_grouped(std::span<const ScoredSample> scored,
                                        std::span<const std::vector<std::size_t>> groups,
                                        const MetricFn& metric, const BootstrapOptions& opts) {
  check_options(opts);
  if (groups.empty()) throw UndefinedMetric("bootstrap: no resampling units");

  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(opts.n_resamples));
  std::vector<ScoredSample> resample;
  resample.reserve(scored.size());

  for (int r = 0; r < opts.n_resamples; ++r) {
    std::mt19937_64 rng(derive_seed(opts.seed, static_cast<std::uint64_t>(r)));
    std::uniform_int_distribution<std::size_t> pick(0, groups.size() - 1);
    int attempt = 0;
    for (;;) {
      resample.clear();
      for (std::size_t k = 0; k < groups.size(); ++k) {
        for (auto idx : groups[pick(rng)]) resample.push_back(scored[idx]);
      }
      const auto c = count_classes(resample);
      if (c.pos > 0 && c.neg > 0) break;
      if (++attempt > opts.max_retries) {
        throw UndefinedMetric("bootstrap: resample " + std::to_string(r) + " stayed single-class after " +
                              std::to_string(opts.max_retries) + " retries");
      }
    }
    stats.push_back(metric(resample));
  }
  return percentile_interval(std::move(stats), opts.level);
}

ConfidenceInterval bootstrap_ci(std::span<const ScoredSample> scored, const MetricFn& metric,
                                const BootstrapOptions& opts) {
  std::vector<std::vector<std::size_t>> singletons(scored.size());
  for (std::size_t i = 0; i < scored.size(); ++i) singletons[i] = {i};
  return bootstrap_ci_grouped(scored, singletons, metric, opts);
}

ConfidenceInterval bootstrap_mean_ci(std::span<const double> values, const BootstrapOptions& opts) {
  check_options(opts);
  if (values.empty()) throw UndefinedMetric("bootstrap: no values");
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(opts.n_resamples));
  for (int r = 0; r < opts.n_resamples; ++r) {
    std::mt19937_64 rng(derive_seed(opts.seed, static_cast<std::uint64_t>(r)));
    std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
    double sum = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) sum += values[pick(rng)];
    stats.push_back(sum / static_cast<double>(values.size()));
  }
  return percentile_interval(std::move(stats), opts.level);
}

MetricsReport point_metrics(std::span<const ScoredSample> scored) {
  MetricsReport report;
  report.auc = auc_roc(scored);
  const auto plain = se_sp_at_tau(scored, 0.0);
  report.se = plain.se;
  report.sp = plain.sp;
  const auto at80 = se_at_target_sp(scored, 0.8);
  report.se_at_80sp = at80.se;
  report.tau = at80.tau;
  return report;
}

MetricsReport full_report(std::span<const ScoredSample> scored, const BootstrapOptions& opts) {
  auto report = point_metrics(scored);
  std::uint64_t stream = 0;
  for (const char* name : {"auc", "se", "sp", "se_at_80sp"}) {
    auto o = opts;
    o.seed = derive_seed(opts.seed, stream++);
    report.ci[name] = bootstrap_ci(scored, metric_by_name(name), o);
  }
  return report;
}

std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  static constexpr const char* kKeys[] = {"auc", "se", "sp", "se_at_80sp"};
  std::size_t name_width = 8;
  for (const auto& [name, _] : rows) name_width = std::max(name_width, name.size() + 2);

  std::ostringstream out;
  char buf[64];
  auto cell = [&](const std::string& text) {
    std::snprintf(buf, sizeof buf, "%-14s", text.c_str());
    out << buf;
  };
  auto pad_name = [&](const std::string& name) {
    out << name << std::string(name_width - name.size(), ' ');
  };

  pad_name("");
  for (const char* h : {"AUC", "SE", "SP", "SE@80%SP"}) cell(h);
  out << '\n';
  for (const auto& [name, r] : rows) {
    const double values[] = {r.auc, r.se, r.sp, r.se_at_80sp};
    pad_name(name);
    for (double v : values) {
      std::snprintf(buf, sizeof buf, "%.2f", v);
      cell(buf);
    }
    out << '\n';
    pad_name("");
    for (const char* key : kKeys) {
      const auto it = r.ci.find(key);
      if (it == r.ci.end()) {
        cell("");
        continue;
      }
      std::snprintf(buf, sizeof buf, "(%.2f-%.2f)", it->second.low, it->second.high);
      cell(buf);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace fedsim
