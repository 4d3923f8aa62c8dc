#include "fedsim/federation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <future>
#include <limits>
#include <numeric>
#include <ostream>

#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::FedAvg: return "fedavg";
    case StrategyKind::FedProx: return "fedprox";
    case StrategyKind::FedLoss: return "fedloss";
  }
  return "unknown";
}

std::string to_string(LossMode mode) { return mode == LossMode::Sum ? "sum" : "mean"; }

StrategyKind parse_strategy_kind(const std::string& text) {
  const auto t = lower(text);
  if (t == "fedavg") return StrategyKind::FedAvg;
  if (t == "fedprox") return StrategyKind::FedProx;
  if (t == "fedloss") return StrategyKind::FedLoss;
  throw ConfigError("unknown strategy '" + text + "' (expected fedavg, fedprox or fedloss)");
}

LossMode parse_loss_mode(const std::string& text) {
  const auto t = lower(text);
  if (t == "sum") return LossMode::Sum;
  if (t == "mean") return LossMode::Mean;
  throw ConfigError("unknown loss_mode '" + text + "' (expected sum or mean)");
}

void StrategyConfig::validate() const {
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("mu must be a finite value >= 0");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta must be > 0");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be > 0");
  if (epochs < 1) throw ConfigError("E (epochs) must be >= 1");
  if (clients_per_round < 1) throw ConfigError("M (clients_per_round) must be >= 1");
}

// ---------------------------------------------------------------------------

ClientDirectory::ClientDirectory(const Cohort& clients) : clients_(&clients) {
  index_.reserve(clients.size());
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (!index_.emplace(clients[i].client_id, i).second) {
      throw ConfigError("duplicate client id " + std::to_string(clients[i].client_id));
    }
  }
}

const ClientDataset& ClientDirectory::at(int client_id) const {
  const auto it = index_.find(client_id);
  if (it == index_.end()) throw ConfigError("unknown client id " + std::to_string(client_id));
  return (*clients_)[it->second];
}

std::vector<int> ClientDirectory::ids() const {
  std::vector<int> out;
  out.reserve(clients_->size());
  for (const auto& c : *clients_) out.push_back(c.client_id);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<int> select_clients(std::span<const int> pool, int m, std::mt19937_64& rng) {
  if (pool.empty()) throw ConfigError("select_clients: empty client pool");
  if (m < 1) throw ConfigError("select_clients: M must be >= 1");
  std::vector<int> ids(pool.begin(), pool.end());
  const std::size_t take = std::min(static_cast<std::size_t>(m), ids.size());
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(take);
  return ids;
}

ClientUpdate client_execute(const ParamVector& global, const ClientDataset& client,
                            const StrategyConfig& cfg) {
  ClientUpdate update;
  update.client_id = client.client_id;
  update.n_samples = static_cast<int>(client.samples.size());

  update.pre_loss = total_loss(global, client.samples);
  if (cfg.loss_mode == LossMode::Mean && update.n_samples > 0) {
    update.pre_loss /= static_cast<double>(update.n_samples);
  }

  std::optional<ProxTerm> prox;
  if (cfg.kind == StrategyKind::FedProx) prox = ProxTerm{cfg.mu, &global};
  const auto trained = sgd_epochs(global, client.samples, cfg.lr, cfg.epochs, prox);
  update.delta = global - trained;
  return update;
}

std::vector<double> weights_fedavg(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw AggregationError("weights_fedavg: no updates");
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.n_samples < 1) {
      throw AggregationError("client " + std::to_string(u.client_id) + " reported no samples");
    }
    total += u.n_samples;
  }
  std::vector<double> w;
  w.reserve(updates.size());
  for (const auto& u : updates) w.push_back(static_cast<double>(u.n_samples) / total);
  return w;
}

std::vector<double> weights_fedloss(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw AggregationError("weights_fedloss: no updates");
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& u : updates) {
    if (!std::isfinite(u.pre_loss)) {
      throw AggregationError("client " + std::to_string(u.client_id) + " reported a non-finite loss");
    }
    hi = std::max(hi, u.pre_loss);
  }
  std::vector<double> w;
  w.reserve(updates.size());
  double total = 0.0;
  for (const auto& u : updates) {
    w.push_back(std::exp(u.pre_loss - hi));
    total += w.back();
  }
  for (auto& x : w) x /= total;
  return w;
}

std::vector<double> strategy_weights(StrategyKind kind, std::span<const ClientUpdate> updates) {
  return kind == StrategyKind::FedLoss ? weights_fedloss(updates) : weights_fedavg(updates);
}

ParamVector apply_update(const ParamVector& global, std::span<const double> weights,
                         std::span<const ClientUpdate> updates, double eta) {
  if (weights.size() != updates.size()) {
    throw ShapeError("apply_update: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(updates.size()) + " updates");
  }
  ParamVector step(global.spec());
  for (std::size_t i = 0; i < updates.size(); ++i) {
    global.require_same_shape(updates[i].delta);
    step.axpy(weights[i], updates[i].delta);
  }
  ParamVector next = global;
  if (eta != 0.0) next.axpy(-eta, step);
  return next;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<ClientUpdate> execute_all(const ParamVector& global, const ClientDirectory& clients,
                                      std::span<const int> ids, const StrategyConfig& cfg,
                                      const ExecutionOptions& exec) {
  std::vector<ClientUpdate> updates(ids.size());
  const auto workers = static_cast<std::size_t>(std::max(1, exec.threads));
  if (workers == 1 || ids.size() < 2) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      updates[i] = client_execute(global, clients.at(ids[i]), cfg);
    }
    return updates;
  }
  std::vector<std::future<void>> jobs;
  const std::size_t n_jobs = std::min(workers, ids.size());
  for (std::size_t w = 0; w < n_jobs; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < ids.size(); i += n_jobs) {
        updates[i] = client_execute(global, clients.at(ids[i]), cfg);
      }
    }));
  }
  for (auto& j : jobs) j.get();
  return updates;
}

double mean_or_nan(double sum, int n) { return n > 0 ? sum / n : kNaN; }

}  // namespace

RoundResult run_round(const ParamVector& global, const ClientDirectory& clients,
                      std::span<const int> pool, const StrategyConfig& cfg, std::mt19937_64& rng,
                      int round_index, const ExecutionOptions& exec) {
  auto selected = select_clients(pool, cfg.clients_per_round, rng);
  std::sort(selected.begin(), selected.end());

  const auto updates = execute_all(global, clients, selected, cfg, exec);
  const auto weights = strategy_weights(cfg.kind, updates);

  RoundResult result{apply_update(global, weights, updates, cfg.eta), {}};
  auto& log = result.log;
  log.round = round_index;
  log.selected = selected;
  log.weights = weights;

  double w_pos = 0.0, w_neg = 0.0, l_pos = 0.0, l_neg = 0.0;
  int n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const int label = clients.at(selected[i]).label_class;
    log.pre_losses.push_back(updates[i].pre_loss);
    log.labels.push_back(label);
    if (label == 1) {
      w_pos += weights[i];
      l_pos += updates[i].pre_loss;
      ++n_pos;
    } else {
      w_neg += weights[i];
      l_neg += updates[i].pre_loss;
      ++n_neg;
    }
  }
  log.mean_weight_pos = mean_or_nan(w_pos, n_pos);
  log.mean_weight_neg = mean_or_nan(w_neg, n_neg);
  log.mean_preloss_pos = mean_or_nan(l_pos, n_pos);
  log.mean_preloss_neg = mean_or_nan(l_neg, n_neg);
  return result;
}

std::vector<ScoredSample> score_clients(const ParamVector& params, const Cohort& clients) {
  std::vector<ScoredSample> scored;
  for (const auto& c : clients) {
    for (const auto& s : c.samples) {
      const auto p = forward(params, s);
      scored.push_back({p.p_pos, p.p_neg, s.label});
    }
  }
  return scored;
}

MetricsReport evaluate(const ParamVector& params, const Cohort& test_clients) {
  return point_metrics(score_clients(params, test_clients));
}

RunResult run_random_setting(const CohortSplit& split, const ParamVector& initial,
                             const StrategyConfig& cfg, int rounds, int eval_every,
                             std::uint64_t seed, const ExecutionOptions& exec) {
  cfg.validate();
  if (rounds < 0) throw ConfigError("T (rounds) must be >= 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (split.train_clients.empty()) throw ConfigError("run_random_setting: empty train pool");

  const ClientDirectory directory(split.train_clients);
  const auto pool = directory.ids();
  std::mt19937_64 rng(seed);

  RunResult run;
  run.final_model = initial;
  run.initial_metrics = evaluate(initial, split.test_clients);
  run.history.reserve(static_cast<std::size_t>(rounds));
  for (int t = 1; t <= rounds; ++t) {
    auto [next, log] = run_round(run.final_model, directory, pool, cfg, rng, t, exec);
    run.final_model = std::move(next);
    if (t % eval_every == 0) log.metrics = evaluate(run.final_model, split.test_clients);
    run.history.push_back(std::move(log));
  }
  return run;
}

RunResult run_chronological_setting(const CohortSplit& split, const ParamVector& initial,
                                    const StrategyConfig& cfg, int n_months, int rounds_per_month,
                                    std::uint64_t seed, const ExecutionOptions& exec) {
  cfg.validate();
  if (rounds_per_month < 1) throw ConfigError("rounds_per_month must be >= 1");
  const auto pools = monthly_pools(split.train_clients, n_months);
  if (std::all_of(pools.begin(), pools.end(), [](const auto& p) { return p.empty(); })) {
    throw ConfigError("run_chronological_setting: every monthly pool is empty");
  }

  const ClientDirectory directory(split.train_clients);
  std::mt19937_64 rng(seed);

  RunResult run;
  run.final_model = initial;
  run.initial_metrics = evaluate(initial, split.test_clients);
  int t = 0;
  for (int m = 0; m < n_months; ++m) {
    const auto& pool = pools[static_cast<std::size_t>(m)];
    if (pool.empty()) {
      run.notices.push_back("month " + std::to_string(m) + ": no clients, skipped");
      continue;
    }
    for (int r = 0; r < rounds_per_month; ++r) {
      auto [next, log] = run_round(run.final_model, directory, pool, cfg, rng, ++t, exec);
      run.final_model = std::move(next);
      log.month = m;
      if (r + 1 == rounds_per_month) log.metrics = evaluate(run.final_model, split.test_clients);
      run.history.push_back(std::move(log));
    }
  }
  return run;
}

namespace {

void put_number(std::ostream& out, double v) {
  out << ',';
  if (std::isnan(v)) return;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  out << buf;
}

}  // namespace

void write_trace_csv(std::ostream& out, const std::vector<RoundLog>& history,
                     const std::string& strategy) {
  out << kTraceHeader << '\n';
  for (const auto& log : history) {
    if (!log.metrics) continue;
    const auto& m = *log.metrics;
    out << log.round << ',' << strategy;
    for (double v : {m.auc, m.se, m.sp, m.se_at_80sp, log.mean_weight_pos, log.mean_weight_neg,
                     log.mean_preloss_pos, log.mean_preloss_neg}) {
      put_number(out, v);
    }
    out << '\n';
  }
}

}  // namespace fedsim
