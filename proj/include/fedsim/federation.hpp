#pragma once

// Round engine: select clients, run local training, weight the returned
// pseudo-gradients and step the global model. FedLoss weights clients by a
// softmax over the loss of the received global model on their local data;
// FedAvg and FedProx weight by sample count.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedsim/cohort.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/numerics.hpp"

namespace fedsim {

enum class StrategyKind { FedAvg, FedProx, FedLoss };
enum class LossMode { Sum, Mean };

std::string to_string(StrategyKind kind);
std::string to_string(LossMode mode);
/// Accepts "fedavg", "fedprox", "fedloss" (case-insensitive).
StrategyKind parse_strategy_kind(const std::string& text);
LossMode parse_loss_mode(const std::string& text);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::FedLoss;
  double mu = 0.01;            // proximal coefficient, FedProx only
  double eta = 1.0;            // global update rate
  double lr = 0.015;           // local SGD rate
  int epochs = 1;              // local epochs
  int clients_per_round = 30;  // M
  LossMode loss_mode = LossMode::Sum;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const StrategyConfig&) const = default;
};

struct ClientUpdate {
  int client_id = 0;
  double pre_loss = 0.0;  // loss of the received global model, before training
  ParamVector delta;      // received global - locally trained model
  int n_samples = 0;
};

struct RoundLog {
  int round = 0;  // 1-based, continues across months
  int month = -1;
  std::vector<int> selected;  // ascending client id
  std::vector<double> weights;
  std::vector<double> pre_losses;
  std::vector<int> labels;  // simulator-side ground truth, for the traces
  double mean_weight_pos = 0.0;  // NaN when no positive client took part
  double mean_weight_neg = 0.0;
  double mean_preloss_pos = 0.0;
  double mean_preloss_neg = 0.0;
  std::optional<MetricsReport> metrics;
};

/// Id lookup over a cohort; does not own the clients.
class ClientDirectory {
 public:
  explicit ClientDirectory(const Cohort& clients);

  const ClientDataset& at(int client_id) const;
  std::vector<int> ids() const;
  std::size_t size() const { return clients_->size(); }

 private:
  const Cohort* clients_;
  std::unordered_map<int, std::size_t> index_;
};

struct ExecutionOptions {
  /// Worker threads for client_execute within a round. Results do not depend on it.
  int threads = 1;
};

/// min(M, |pool|) distinct ids drawn uniformly without replacement.
/// Throws ConfigError on an empty pool.
std::vector<int> select_clients(std::span<const int> pool, int m, std::mt19937_64& rng);

ClientUpdate client_execute(const ParamVector& global, const ClientDataset& client,
                            const StrategyConfig& cfg);

std::vector<double> weights_fedavg(std::span<const ClientUpdate> updates);

/// Max-shifted softmax of pre_loss. Throws AggregationError on a non-finite loss.
std::vector<double> weights_fedloss(std::span<const ClientUpdate> updates);

std::vector<double> strategy_weights(StrategyKind kind, std::span<const ClientUpdate> updates);

/// global - eta * sum_i w_i * delta_i, accumulated in the given order.
ParamVector apply_update(const ParamVector& global, std::span<const double> weights,
                         std::span<const ClientUpdate> updates, double eta);

struct RoundResult {
  ParamVector global;
  RoundLog log;
};

RoundResult run_round(const ParamVector& global, const ClientDirectory& clients,
                      std::span<const int> pool, const StrategyConfig& cfg, std::mt19937_64& rng,
                      int round_index, const ExecutionOptions& exec = {});

/// Scores every sample of `clients` with `params`.
std::vector<ScoredSample> score_clients(const ParamVector& params, const Cohort& clients);

MetricsReport evaluate(const ParamVector& params, const Cohort& test_clients);

struct RunResult {
  std::vector<RoundLog> history;
  ParamVector final_model;
  MetricsReport initial_metrics;
  std::vector<std::string> notices;
};

/// T rounds over the whole train pool; test metrics every `eval_every` rounds.
RunResult run_random_setting(const CohortSplit& split, const ParamVector& initial,
                             const StrategyConfig& cfg, int rounds, int eval_every,
                             std::uint64_t seed, const ExecutionOptions& exec = {});

/// rounds_per_month rounds per month, sampling only that month's arrivals.
/// Empty months are skipped with a notice; one snapshot per month end.
RunResult run_chronological_setting(const CohortSplit& split, const ParamVector& initial,
                                    const StrategyConfig& cfg, int n_months, int rounds_per_month,
                                    std::uint64_t seed, const ExecutionOptions& exec = {});

inline const char* kTraceHeader =
    "round,strategy,auc,se,sp,se_at_80sp,mean_weight_pos,mean_weight_neg,mean_preloss_pos,"
    "mean_preloss_neg";

/// One row per evaluation snapshot. Undefined means are written as empty fields.
void write_trace_csv(std::ostream& out, const std::vector<RoundLog>& history,
                     const std::string& strategy);

}  // namespace fedsim
