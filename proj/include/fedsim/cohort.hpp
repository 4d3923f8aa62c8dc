#pragma once

// Synthetic client population: single-class clients, a skewed
// samples-per-client distribution, monthly arrival and class-conditional
// features. Stands in for a real crowd-sourced health dataset.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "fedsim/numerics.hpp"

namespace fedsim {

/// Samples per client: 1 with probability `p_single`, otherwise
/// 2 + Geometric(tail_p) (number of failures before the first success).
struct SampleCountDistribution {
  double p_single = 0.72;
  double tail_p = 0.5017;
  int max_samples = 40;

  double mean() const;
  void validate() const;
  bool operator==(const SampleCountDistribution&) const = default;
};

/// Class-conditional diagonal Gaussian embeddings plus independent
/// Bernoulli symptoms. Embedding mean for class c is
/// mean_c + (separability - 1) * (mean_c - midpoint) scaled about the midpoint,
/// i.e. `separability` multiplies the gap between the two means.
struct FeatureModel {
  std::size_t embed_dim = 32;
  std::size_t symptom_dim = 10;
  std::vector<double> mean_neg;
  std::vector<double> mean_pos;
  std::vector<double> stddev;
  std::vector<double> symptom_prob_neg;
  std::vector<double> symptom_prob_pos;
  double separability = 1.0;

  /// Built-in task with overlapping symptom rates and a fixed mean gap.
  static FeatureModel defaults(std::size_t embed_dim = 32, std::size_t symptom_dim = 10);

  /// Class means after applying `separability` to the gap.
  std::vector<double> effective_mean(int label) const;

  void validate() const;
  bool operator==(const FeatureModel&) const = default;
};

struct CohortConfig {
  int n_positive_clients = 482;
  int n_negative_clients = 2478;
  SampleCountDistribution counts_pos;
  SampleCountDistribution counts_neg;
  int n_months = 12;
  std::vector<double> monthly_arrival_weights = default_arrival_weights();
  FeatureModel features = FeatureModel::defaults();
  /// Fraction of clients (with >= 2 samples) given one opposite-label sample.
  double mixed_class_fraction = 0.0;
  std::uint64_t seed = 0;

  static std::vector<double> default_arrival_weights();

  void validate() const;
  bool operator==(const CohortConfig&) const = default;
};

struct ClientDataset {
  int client_id = 0;
  int label_class = 0;
  std::vector<Sample> samples;
  int join_month = 0;
  /// Set only for clients generated under mixed_class_fraction > 0.
  bool mixed = false;

  /// Throws FormatError naming the client if an invariant fails.
  void validate(std::size_t embed_dim, std::size_t symptom_dim, int n_months) const;
  bool operator==(const ClientDataset&) const = default;
};

using Cohort = std::vector<ClientDataset>;

struct CohortSplit {
  Cohort train_clients;
  Cohort test_clients;
};

Cohort generate_cohort(const CohortConfig& config);

/// Holds out round(test_fraction * N) clients uniformly at random.
CohortSplit split_clients(const Cohort& cohort, double test_fraction, std::uint64_t seed);

/// Client ids grouped by join month; pool m holds clients with join_month == m.
std::vector<std::vector<int>> monthly_pools(const Cohort& train_clients, int n_months);

/// All samples of `clients`, in client order.
std::vector<Sample> pooled_samples(const Cohort& clients);

/// One JSON object per line: {"id","class","month","mixed","samples":[[emb...],[sym...],label]...}.
void write_cohort(std::ostream& out, const Cohort& cohort);
void save_cohort(const std::filesystem::path& path, const Cohort& cohort);

/// Parses and validates every client; throws FormatError with the line number.
Cohort read_cohort(std::istream& in, std::size_t embed_dim, std::size_t symptom_dim, int n_months);
Cohort load_cohort(const std::filesystem::path& path, std::size_t embed_dim,
                   std::size_t symptom_dim, int n_months);

}  // namespace fedsim
