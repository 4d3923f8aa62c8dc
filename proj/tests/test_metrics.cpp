#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "fedsim/errors.hpp"
#include "fedsim/metrics.hpp"
#include "oracles.hpp"

using namespace fedsim;

namespace {

ScoredSample scored(double p_pos, int label) { return {p_pos, 1.0 - p_pos, label}; }

}  // namespace

TEST_CASE("auc_roc: small fixed cases") {
  const std::vector<ScoredSample> mixed{scored(0.1, 0), scored(0.4, 0), scored(0.35, 1), scored(0.8, 1)};
  CHECK(auc_roc(mixed) == 0.75);

  const std::vector<ScoredSample> perfect{scored(0.1, 0), scored(0.2, 0), scored(0.7, 1), scored(0.9, 1)};
  CHECK(auc_roc(perfect) == 1.0);

  const std::vector<ScoredSample> tied{scored(0.5, 0), scored(0.5, 1)};
  CHECK(auc_roc(tied) == 0.5);
}

TEST_CASE("auc_roc: single class is undefined") {
  const std::vector<ScoredSample> only_pos{scored(0.2, 1), scored(0.9, 1)};
  CHECK_THROWS_AS(auc_roc(only_pos), UndefinedMetric);
  CHECK_THROWS_AS(auc_roc(std::vector<ScoredSample>{}), UndefinedMetric);
}

TEST_CASE("auc_roc: equals brute force on random instances") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> size(2, 50);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto data = oracle::random_scored(rng, size(rng), trial % 2 == 0);
    if (auc_roc(data) != oracle::pairwise_auc(data)) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("auc_roc: monotone transform and permutation invariance") {
  std::mt19937_64 rng(78);
  for (int trial = 0; trial < 20; ++trial) {
    auto data = oracle::random_scored(rng, 40, trial % 2 == 0);
    const double base = auc_roc(data);
    auto cubed = data;
    for (auto& s : cubed) s.p_pos = s.p_pos * s.p_pos * s.p_pos;
    CHECK(auc_roc(cubed) == base);
    std::shuffle(data.begin(), data.end(), rng);
    CHECK(auc_roc(data) == base);
  }
}

TEST_CASE("se_sp_at_tau") {
  const std::vector<ScoredSample> data{scored(0.9, 1), scored(0.6, 1), scored(0.4, 1),
                                       scored(0.3, 0), scored(0.55, 0), scored(0.1, 0)};
  const auto r = se_sp_at_tau(data, 0.0);
  CHECK(r.se == doctest::Approx(2.0 / 3.0));
  CHECK(r.sp == doctest::Approx(2.0 / 3.0));

  const auto none = se_sp_at_tau(data, 1.0);
  CHECK(none.se == 0.0);
  CHECK(none.sp == 1.0);

  CHECK_THROWS_AS(se_sp_at_tau(std::vector<ScoredSample>{scored(0.3, 0)}, 0.0), UndefinedMetric);
}

TEST_CASE("se_at_target_sp: simple cuts") {
  const std::vector<ScoredSample> perfect{scored(0.1, 0), scored(0.2, 0), scored(0.3, 0),
                                          scored(0.7, 1), scored(0.9, 1)};
  CHECK(se_at_target_sp(perfect, 0.8).se == 1.0);

  // Negatives at margin 0.2 (p_pos 0.6), positives at margin 0.4 (p_pos 0.7).
  std::vector<ScoredSample> two_levels;
  for (int i = 0; i < 5; ++i) two_levels.push_back(scored(0.6, 0));
  for (int i = 0; i < 3; ++i) two_levels.push_back(scored(0.7, 1));
  const auto r = se_at_target_sp(two_levels, 0.8);
  CHECK(r.tau == doctest::Approx(0.2));
  CHECK(r.se == 1.0);
}

TEST_CASE("se_at_target_sp: smallest feasible tau and maximal se") {
  std::mt19937_64 rng(91);
  std::uniform_int_distribution<std::size_t> size(2, 30);
  std::uniform_real_distribution<double> target_dist(0.05, 0.95);
  for (int trial = 0; trial < 200; ++trial) {
    const auto data = oracle::random_scored(rng, size(rng), trial % 3 == 0);
    const double target = target_dist(rng);
    const auto r = se_at_target_sp(data, target);
    CHECK(se_sp_at_tau(data, r.tau).sp >= target);
    CHECK(se_sp_at_tau(data, r.tau).se == r.se);

    const auto taus = candidate_thresholds(data);
    const auto it = std::find(taus.begin(), taus.end(), r.tau);
    REQUIRE(it != taus.end());
    if (it != taus.begin()) CHECK(se_sp_at_tau(data, *(it - 1)).sp < target);

    // Exhaustive sweep, including points between candidates.
    double best = 0.0;
    std::vector<double> sweep = taus;
    for (std::size_t i = 0; i + 1 < taus.size(); ++i) sweep.push_back(0.5 * (taus[i] + taus[i + 1]));
    for (double tau : sweep) {
      const auto s = se_sp_at_tau(data, tau);
      if (s.sp >= target) best = std::max(best, s.se);
    }
    CHECK(r.se == best);
  }
}

TEST_CASE("candidate_thresholds are sorted, distinct and bracketed") {
  const std::vector<ScoredSample> data{scored(0.6, 0), scored(0.6, 1), scored(0.2, 1)};
  const auto taus = candidate_thresholds(data);
  REQUIRE(taus.size() == 4);
  CHECK(taus.front() == -1.0);
  CHECK(taus.back() == 1.0);
  CHECK(std::is_sorted(taus.begin(), taus.end()));
}

TEST_CASE("quantile interpolates linearly") {
  std::vector<double> v{4.0, 1.0, 3.0, 2.0};
  CHECK(quantile(v, 0.0) == 1.0);
  CHECK(quantile(v, 1.0) == 4.0);
  CHECK(quantile(v, 0.5) == doctest::Approx(2.5));
  std::vector<double> empty;
  CHECK_THROWS_AS(quantile(empty, 0.5), UndefinedMetric);
}

TEST_CASE("bootstrap_ci") {
  std::mt19937_64 rng(5);
  const auto data = oracle::random_scored(rng, 60, false);
  BootstrapOptions opts;
  opts.n_resamples = 200;
  opts.seed = 42;

  SUBCASE("deterministic given seed") {
    const auto a = bootstrap_ci(data, metric_by_name("auc"), opts);
    const auto b = bootstrap_ci(data, metric_by_name("auc"), opts);
    CHECK(a.low == b.low);
    CHECK(a.high == b.high);
    auto other = opts;
    other.seed = 43;
    const auto c = bootstrap_ci(data, metric_by_name("auc"), other);
    CHECK((c.low != a.low || c.high != a.high));
  }
  SUBCASE("constant metric gives a zero-width interval") {
    const auto ci = bootstrap_ci(data, [](std::span<const ScoredSample>) { return 0.37; }, opts);
    CHECK(ci.low == 0.37);
    CHECK(ci.high == 0.37);
  }
  SUBCASE("one resample gives a point") {
    opts.n_resamples = 1;
    const auto ci = bootstrap_ci(data, metric_by_name("se"), opts);
    CHECK(ci.low == ci.high);
  }
  SUBCASE("endpoints ordered and inside [0,1]") {
    for (const char* name : {"auc", "se", "sp", "se_at_80sp"}) {
      const auto ci = bootstrap_ci(data, metric_by_name(name), opts);
      CHECK(ci.low <= ci.high);
      CHECK(ci.low >= 0.0);
      CHECK(ci.high <= 1.0);
    }
  }
  SUBCASE("persistently single-class resamples are an error") {
    std::vector<ScoredSample> lopsided(200, scored(0.3, 0));
    lopsided.push_back(scored(0.8, 1));
    opts.max_retries = 0;
    opts.n_resamples = 50;
    CHECK_THROWS_AS(bootstrap_ci(lopsided, metric_by_name("auc"), opts), UndefinedMetric);
  }
  SUBCASE("bad options") {
    opts.level = 1.0;
    CHECK_THROWS_AS(bootstrap_ci(data, metric_by_name("auc"), opts), ConfigError);
  }
}

TEST_CASE("bootstrap_ci: well-separated AUC interval is narrow and covers the point") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<ScoredSample> data;
    for (int i = 0; i < 500; ++i) {
      const int label = i % 3 == 0 ? 1 : 0;
      const double z = gauss(rng) + (label == 1 ? 2.5 : 0.0);
      data.push_back(scored(1.0 / (1.0 + std::exp(-z)), label));
    }
    BootstrapOptions opts;
    opts.n_resamples = 300;
    opts.seed = seed;
    const auto ci = bootstrap_ci(data, metric_by_name("auc"), opts);
    const double point = auc_roc(data);
    CHECK(ci.high - ci.low < 0.15);
    CHECK(ci.low <= point);
    CHECK(point <= ci.high);
  }
}

TEST_CASE("bootstrap_ci_grouped resamples whole groups") {
  // Every group holds one positive and one negative with the same ordering,
  // so any group resample has AUC exactly 1.
  std::vector<ScoredSample> data;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t g = 0; g < 10; ++g) {
    data.push_back(scored(0.1, 0));
    data.push_back(scored(0.9, 1));
    groups.push_back({2 * g, 2 * g + 1});
  }
  BootstrapOptions opts;
  opts.n_resamples = 50;
  const auto ci = bootstrap_ci_grouped(data, groups, metric_by_name("auc"), opts);
  CHECK(ci.low == 1.0);
  CHECK(ci.high == 1.0);
}

TEST_CASE("bootstrap_mean_ci") {
  const std::vector<double> constant(7, 0.4);
  BootstrapOptions opts;
  opts.n_resamples = 100;
  const auto ci = bootstrap_mean_ci(constant, opts);
  CHECK(ci.low == doctest::Approx(0.4));
  CHECK(ci.high == doctest::Approx(0.4));
  CHECK_THROWS_AS(bootstrap_mean_ci(std::vector<double>{}, opts), UndefinedMetric);
}

TEST_CASE("metric_by_name and reports") {
  CHECK_THROWS_AS(metric_by_name("f1"), ConfigError);

  std::mt19937_64 rng(12);
  const auto data = oracle::random_scored(rng, 80, false);
  const auto point = point_metrics(data);
  CHECK(point.auc == auc_roc(data));
  CHECK(point.se == se_sp_at_tau(data, 0.0).se);
  CHECK(point.ci.empty());

  BootstrapOptions opts;
  opts.n_resamples = 50;
  opts.seed = 3;
  const auto full = full_report(data, opts);
  CHECK(full.ci.size() == 4);
  CHECK(full.auc == point.auc);

  const auto table = format_table({{"FedLoss", full}});
  CHECK(table.find("SE@80%SP") != std::string::npos);
  CHECK(table.find("FedLoss") != std::string::npos);
  CHECK(table.find('(') != std::string::npos);
}

TEST_CASE("derive_seed spreads nearby inputs") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(9, 4) == derive_seed(9, 4));
}
