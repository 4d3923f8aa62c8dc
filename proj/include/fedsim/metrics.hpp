#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fedsim {

struct ScoredSample {
  double p_pos = 0.5;
  double p_neg = 0.5;
  int label = 0;

  /// Decision margin compared against tau: positive iff margin > tau.
  double margin() const { return p_pos - p_neg; }
};

struct ConfidenceInterval {
  double low = 0.0;
  double high = 0.0;
};

/// Point metrics for one model on one evaluation set.
struct MetricsReport {
  double auc = 0.0;
  double se = 0.0;          // at tau = 0
  double sp = 0.0;          // at tau = 0
  double se_at_80sp = 0.0;  // at the searched tau
  double tau = 0.0;
  std::map<std::string, ConfidenceInterval> ci;  // keys: auc, se, sp, se_at_80sp
};

/// Rank-sum AUC; ties between a positive and a negative count 1/2.
/// Throws UndefinedMetric unless both classes are present.
double auc_roc(std::span<const ScoredSample> scored);

struct SeSp {
  double se = 0.0;
  double sp = 0.0;
};

/// Sensitivity/specificity under the rule p_pos > p_neg + tau.
SeSp se_sp_at_tau(std::span<const ScoredSample> scored, double tau);

struct ThresholdResult {
  double se = 0.0;
  double tau = 0.0;
};

/// Smallest achievable tau with sp(tau) >= target_sp, and the sensitivity
/// there. Candidates are the distinct margins plus the sentinels -1 and 1.
ThresholdResult se_at_target_sp(std::span<const ScoredSample> scored, double target_sp);

/// Sorted candidate thresholds used by se_at_target_sp.
std::vector<double> candidate_thresholds(std::span<const ScoredSample> scored);

using MetricFn = std::function<double(std::span<const ScoredSample>)>;

/// Named metric used by reports: "auc", "se", "sp", "se_at_80sp".
MetricFn metric_by_name(const std::string& name);

struct BootstrapOptions {
  int n_resamples = 1000;
  double level = 0.95;
  std::uint64_t seed = 0;
  int max_retries = 100;
};

/// Percentile bootstrap over samples. Resamples containing a single class
/// are redrawn; after max_retries consecutive failures throws UndefinedMetric.
ConfidenceInterval bootstrap_ci(std::span<const ScoredSample> scored, const MetricFn& metric,
                                const BootstrapOptions& opts);

/// Same as bootstrap_ci but resamples whole groups (e.g. users). `groups[i]`
/// lists the indices into `scored` belonging to group i.
ConfidenceInterval bootstrap_ci_grouped(std::span<const ScoredSample> scored,
                                        std::span<const std::vector<std::size_t>> groups,
                                        const MetricFn& metric, const BootstrapOptions& opts);

/// Percentile bootstrap of the mean of `values`.
ConfidenceInterval bootstrap_mean_ci(std::span<const double> values, const BootstrapOptions& opts);

/// Linear-interpolated quantile of `values` (q in [0,1]); `values` is sorted in place.
double quantile(std::vector<double>& values, double q);

/// AUC, SE/SP at tau = 0 and SE at 80% SP, without intervals.
MetricsReport point_metrics(std::span<const ScoredSample> scored);

/// point_metrics plus bootstrap intervals for all four metrics.
MetricsReport full_report(std::span<const ScoredSample> scored, const BootstrapOptions& opts);

/// Table-style text block: one header row, then for each named row the
/// point estimates with "(low-high)" underneath.
std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

/// Independent stream seed for item `index` under `seed` (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace fedsim
