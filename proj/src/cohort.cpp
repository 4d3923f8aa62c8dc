#include "fedsim/cohort.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>

#include <json.hpp>

#include "fedsim/errors.hpp"

namespace fedsim {

using nlohmann::json;

double SampleCountDistribution::mean() const {
  // 2 + G clamped at max_samples, G ~ Geometric(tail_p) on {0,1,...}.
  double tail_mean = 0.0;
  double mass = 0.0;
  const int cap = std::max(2, max_samples);
  for (int k = 2; k < cap; ++k) {
    const double p = tail_p * std::pow(1.0 - tail_p, k - 2);
    tail_mean += p * k;
    mass += p;
  }
  tail_mean += (1.0 - mass) * cap;
  return p_single + (1.0 - p_single) * tail_mean;
}

void SampleCountDistribution::validate() const {
  if (!(p_single >= 0.0 && p_single <= 1.0)) throw ConfigError("p_single must be in [0,1]");
  if (!(tail_p > 0.0 && tail_p <= 1.0)) throw ConfigError("tail_p must be in (0,1]");
  if (max_samples < 2) throw ConfigError("max_samples must be >= 2");
}

FeatureModel FeatureModel::defaults(std::size_t embed_dim, std::size_t symptom_dim) {
  FeatureModel fm;
  fm.embed_dim = embed_dim;
  fm.symptom_dim = symptom_dim;

  // Mean gap of Euclidean length kGap along a fixed, uneven direction.
  constexpr double kGap = 0.8;
  std::vector<double> dir(embed_dim);
  for (std::size_t k = 0; k < embed_dim; ++k) {
    dir[k] = (k % 2 == 0 ? 1.0 : -1.0) * (1.0 + static_cast<double>(k % 3));
  }
  const double norm = std::sqrt(std::inner_product(dir.begin(), dir.end(), dir.begin(), 0.0));
  fm.mean_neg.resize(embed_dim);
  fm.mean_pos.resize(embed_dim);
  for (std::size_t k = 0; k < embed_dim; ++k) {
    const double half = norm > 0.0 ? 0.5 * kGap * dir[k] / norm : 0.0;
    fm.mean_neg[k] = -half;
    fm.mean_pos[k] = half;
  }
  fm.stddev.assign(embed_dim, 1.0);

  // Negatives are often symptomatic and positives often asymptomatic, so the
  // symptom rates overlap heavily.
  fm.symptom_prob_neg.resize(symptom_dim);
  fm.symptom_prob_pos.resize(symptom_dim);
  for (std::size_t k = 0; k < symptom_dim; ++k) {
    const double base = 0.15 + 0.25 * static_cast<double>(k % 4) / 3.0;
    fm.symptom_prob_neg[k] = base;
    fm.symptom_prob_pos[k] = std::min(0.95, base + 0.20);
  }
  return fm;
}

std::vector<double> FeatureModel::effective_mean(int label) const {
  const auto& own = label == 1 ? mean_pos : mean_neg;
  std::vector<double> out(embed_dim);
  for (std::size_t k = 0; k < embed_dim; ++k) {
    const double mid = 0.5 * (mean_neg[k] + mean_pos[k]);
    out[k] = mid + separability * (own[k] - mid);
  }
  return out;
}

void FeatureModel::validate() const {
  if (mean_neg.size() != embed_dim || mean_pos.size() != embed_dim || stddev.size() != embed_dim) {
    throw ConfigError("feature model: embedding vectors must have embed_dim entries");
  }
  if (symptom_prob_neg.size() != symptom_dim || symptom_prob_pos.size() != symptom_dim) {
    throw ConfigError("feature model: symptom probabilities must have symptom_dim entries");
  }
  for (double s : stddev) {
    if (!(s > 0.0)) throw ConfigError("feature model: stddev must be > 0");
  }
  for (const auto* probs : {&symptom_prob_neg, &symptom_prob_pos}) {
    for (double p : *probs) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("feature model: symptom probability outside [0,1]");
    }
  }
  if (!(separability >= 0.0)) throw ConfigError("feature model: separability must be >= 0");
}

std::vector<double> CohortConfig::default_arrival_weights() {
  // Twelve months, peaking at index 6.
  return {0.03, 0.04, 0.05, 0.07, 0.09, 0.12, 0.20, 0.13, 0.10, 0.08, 0.05, 0.04};
}

void CohortConfig::validate() const {
  if (n_positive_clients < 0) throw ConfigError("n_positive_clients must be >= 0");
  if (n_negative_clients < 0) throw ConfigError("n_negative_clients must be >= 0");
  if (n_months < 1) throw ConfigError("n_months must be >= 1");
  if (monthly_arrival_weights.size() != static_cast<std::size_t>(n_months)) {
    throw ConfigError("monthly_arrival_weights must have n_months entries");
  }
  double sum = 0.0;
  for (double w : monthly_arrival_weights) {
    if (!(w >= 0.0)) throw ConfigError("monthly_arrival_weights must be nonnegative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("monthly_arrival_weights must sum to 1");
  if (!(mixed_class_fraction >= 0.0 && mixed_class_fraction <= 1.0)) {
    throw ConfigError("mixed_class_fraction must be in [0,1]");
  }
  counts_pos.validate();
  counts_neg.validate();
  features.validate();
}

void ClientDataset::validate(std::size_t embed_dim, std::size_t symptom_dim, int n_months) const {
  const std::string who = "client " + std::to_string(client_id);
  if (label_class != 0 && label_class != 1) throw FormatError(who + ": class must be 0 or 1");
  if (samples.empty()) throw FormatError(who + ": no samples");
  if (join_month < 0 || join_month >= n_months) throw FormatError(who + ": join month out of range");
  for (const auto& s : samples) {
    if (s.embedding.size() != embed_dim || s.symptoms.size() != symptom_dim) {
      throw FormatError(who + ": sample dimensions do not match");
    }
    for (double v : s.embedding) {
      if (!std::isfinite(v)) throw FormatError(who + ": non-finite embedding value");
    }
    for (auto b : s.symptoms) {
      if (b > 1) throw FormatError(who + ": symptom entries must be 0 or 1");
    }
    if (s.label != 0 && s.label != 1) throw FormatError(who + ": label must be 0 or 1");
    if (!mixed && s.label != label_class) throw FormatError(who + ": single-class client holds a foreign label");
  }
}

namespace {

int draw_count(const SampleCountDistribution& d, std::mt19937_64& rng) {
  std::bernoulli_distribution single(d.p_single);
  if (single(rng)) return 1;
  std::geometric_distribution<int> tail(d.tail_p);
  return std::min(d.max_samples, 2 + tail(rng));
}

Sample draw_sample(const FeatureModel& fm, const std::vector<double>& mean, int label,
                   std::mt19937_64& rng) {
  Sample s;
  s.label = label;
  s.embedding.resize(fm.embed_dim);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t k = 0; k < fm.embed_dim; ++k) s.embedding[k] = mean[k] + fm.stddev[k] * gauss(rng);
  const auto& probs = label == 1 ? fm.symptom_prob_pos : fm.symptom_prob_neg;
  s.symptoms.resize(fm.symptom_dim);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t k = 0; k < fm.symptom_dim; ++k) s.symptoms[k] = unit(rng) < probs[k] ? 1 : 0;
  return s;
}

}  // namespace

Cohort generate_cohort(const CohortConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);

  const int n_total = config.n_positive_clients + config.n_negative_clients;
  std::vector<int> classes(static_cast<std::size_t>(n_total), 0);
  std::fill_n(classes.begin(), config.n_positive_clients, 1);
  std::shuffle(classes.begin(), classes.end(), rng);

  const std::array<std::vector<double>, 2> means{config.features.effective_mean(0),
                                                 config.features.effective_mean(1)};
  std::discrete_distribution<int> month(config.monthly_arrival_weights.begin(),
                                        config.monthly_arrival_weights.end());
  std::bernoulli_distribution mixed(config.mixed_class_fraction);

  Cohort cohort;
  cohort.reserve(classes.size());
  for (int id = 0; id < n_total; ++id) {
    ClientDataset client;
    client.client_id = id;
    client.label_class = classes[static_cast<std::size_t>(id)];
    client.join_month = month(rng);
    const auto& dist = client.label_class == 1 ? config.counts_pos : config.counts_neg;
    const int n = draw_count(dist, rng);
    client.samples.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      client.samples.push_back(
          draw_sample(config.features, means[client.label_class], client.label_class, rng));
    }
    if (config.mixed_class_fraction > 0.0 && n >= 2 && mixed(rng)) {
      const int other = 1 - client.label_class;
      client.samples.back() = draw_sample(config.features, means[other], other, rng);
      client.mixed = true;
    }
    cohort.push_back(std::move(client));
  }
  return cohort;
}

CohortSplit split_clients(const Cohort& cohort, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) {
    throw ConfigError("test_fraction must be in [0,1]");
  }
  const std::size_t n = cohort.size();
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<bool> is_test(n, false);
  for (std::size_t k = 0; k < n_test; ++k) is_test[order[k]] = true;

  CohortSplit split;
  split.test_clients.reserve(n_test);
  split.train_clients.reserve(n - n_test);
  for (std::size_t i = 0; i < n; ++i) {
    (is_test[i] ? split.test_clients : split.train_clients).push_back(cohort[i]);
  }
  return split;
}

std::vector<std::vector<int>> monthly_pools(const Cohort& train_clients, int n_months) {
  if (n_months < 1) throw ConfigError("n_months must be >= 1");
  std::vector<std::vector<int>> pools(static_cast<std::size_t>(n_months));
  for (const auto& c : train_clients) {
    if (c.join_month < 0 || c.join_month >= n_months) {
      throw ConfigError("client " + std::to_string(c.client_id) + " has join month " +
                        std::to_string(c.join_month) + " outside [0, " + std::to_string(n_months) + ")");
    }
    pools[static_cast<std::size_t>(c.join_month)].push_back(c.client_id);
  }
  return pools;
}

std::vector<Sample> pooled_samples(const Cohort& clients) {
  std::vector<Sample> out;
  for (const auto& c : clients) out.insert(out.end(), c.samples.begin(), c.samples.end());
  return out;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON

void write_cohort(std::ostream& out, const Cohort& cohort) {
  for (const auto& c : cohort) {
    json samples = json::array();
    for (const auto& s : c.samples) {
      samples.push_back(json::array({s.embedding, s.symptoms, s.label}));
    }
    json line{{"id", c.client_id},
              {"class", c.label_class},
              {"month", c.join_month},
              {"mixed", c.mixed},
              {"samples", std::move(samples)}};
    out << line.dump() << '\n';
  }
}

void save_cohort(const std::filesystem::path& path, const Cohort& cohort) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_cohort(out, cohort);
}

Cohort read_cohort(std::istream& in, std::size_t embed_dim, std::size_t symptom_dim, int n_months) {
  Cohort cohort;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    const std::string where = "cohort line " + std::to_string(line_no) + ": ";
    ClientDataset c;
    try {
      const auto line = json::parse(text);
      c.client_id = line.at("id").get<int>();
      c.label_class = line.at("class").get<int>();
      c.join_month = line.at("month").get<int>();
      c.mixed = line.value("mixed", false);
      for (const auto& entry : line.at("samples")) {
        if (!entry.is_array() || entry.size() != 3) throw FormatError("sample must be [embedding, symptoms, label]");
        Sample s;
        s.embedding = entry[0].get<std::vector<double>>();
        s.symptoms = entry[1].get<std::vector<std::uint8_t>>();
        s.label = entry[2].get<int>();
        c.samples.push_back(std::move(s));
      }
      c.validate(embed_dim, symptom_dim, n_months);
    } catch (const json::exception& e) {
      throw FormatError(where + e.what());
    } catch (const FormatError& e) {
      throw FormatError(where + e.what());
    }
    cohort.push_back(std::move(c));
  }
  std::unordered_set<int> seen;
  for (const auto& c : cohort) {
    if (!seen.insert(c.client_id).second) {
      throw FormatError("cohort: duplicate client id " + std::to_string(c.client_id));
    }
  }
  return cohort;
}

Cohort load_cohort(const std::filesystem::path& path, std::size_t embed_dim,
                   std::size_t symptom_dim, int n_months) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_cohort(in, embed_dim, symptom_dim, n_months);
}

}  // namespace fedsim
