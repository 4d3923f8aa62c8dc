#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "fedsim/cohort.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/metrics.hpp"

using namespace fedsim;

namespace {

CohortConfig small_config(std::uint64_t seed) {
  CohortConfig cfg;
  cfg.n_positive_clients = 40;
  cfg.n_negative_clients = 160;
  cfg.features = FeatureModel::defaults(4, 3);
  cfg.seed = seed;
  return cfg;
}

std::size_t count_positive_clients(const Cohort& cohort) {
  return static_cast<std::size_t>(
      std::count_if(cohort.begin(), cohort.end(), [](const auto& c) { return c.label_class == 1; }));
}

}  // namespace

TEST_CASE("default cohort has the configured class sizes") {
  CohortConfig cfg;
  cfg.seed = 1;
  const auto cohort = generate_cohort(cfg);
  CHECK(cohort.size() == 2960);
  CHECK(count_positive_clients(cohort) == 482);
  for (const auto& c : cohort) {
    CHECK_NOTHROW(c.validate(cfg.features.embed_dim, cfg.features.symptom_dim, cfg.n_months));
  }
}

TEST_CASE("empty cohort") {
  CohortConfig cfg;
  cfg.n_positive_clients = 0;
  cfg.n_negative_clients = 0;
  CHECK(generate_cohort(cfg).empty());
}

TEST_CASE("cohort generation is deterministic") {
  const auto a = generate_cohort(small_config(3));
  CHECK(a == generate_cohort(small_config(3)));
  CHECK_FALSE(a == generate_cohort(small_config(4)));
}

TEST_CASE("single-class clients and sample count distribution") {
  const double prevalence = 482.0 / 2960.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CohortConfig cfg;
    cfg.seed = seed;
    const auto cohort = generate_cohort(cfg);
    std::size_t single = 0;
    std::size_t pos_samples = 0;
    std::size_t all_samples = 0;
    for (const auto& c : cohort) {
      if (c.samples.size() == 1) ++single;
      CHECK(c.samples.size() <= 40);
      for (const auto& s : c.samples) {
        CHECK(s.label == c.label_class);
        pos_samples += static_cast<std::size_t>(s.label);
      }
      all_samples += c.samples.size();
    }
    const double single_frac = static_cast<double>(single) / static_cast<double>(cohort.size());
    CHECK(single_frac >= 0.68);
    CHECK(single_frac <= 0.76);
    const double pos_frac = static_cast<double>(pos_samples) / static_cast<double>(all_samples);
    CHECK(std::abs(pos_frac - prevalence) <= 0.02);
  }
}

TEST_CASE("sample count distribution mean") {
  SampleCountDistribution d;
  // 0.72 * 1 + 0.28 * (2 + (1 - p) / p), ignoring the far-tail cap.
  const double uncapped = 0.72 + 0.28 * (2.0 + (1.0 - 0.5017) / 0.5017);
  CHECK(d.mean() == doctest::Approx(uncapped).epsilon(1e-6));
  d.tail_p = 0.0;
  CHECK_THROWS_AS(d.validate(), ConfigError);
}

TEST_CASE("mixed-class clients are flagged") {
  auto cfg = small_config(2);
  cfg.mixed_class_fraction = 1.0;
  const auto cohort = generate_cohort(cfg);
  for (const auto& c : cohort) {
    if (c.samples.size() < 2) {
      CHECK_FALSE(c.mixed);
      continue;
    }
    CHECK(c.mixed);
    CHECK(c.samples.back().label != c.label_class);
  }
}

TEST_CASE("config validation") {
  CohortConfig cfg;
  cfg.monthly_arrival_weights[0] += 0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = CohortConfig{};
  cfg.features.stddev[0] = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = CohortConfig{};
  cfg.features.symptom_prob_pos[0] = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(std::abs([] {
          double s = 0.0;
          for (double w : CohortConfig::default_arrival_weights()) s += w;
          return s;
        }() - 1.0) <= 1e-9);
}

TEST_CASE("split_clients") {
  CohortConfig cfg;
  cfg.seed = 5;
  const auto cohort = generate_cohort(cfg);
  const auto split = split_clients(cohort, 0.2, 9);
  CHECK(split.test_clients.size() == 592);
  CHECK(split.train_clients.size() == 2368);

  std::set<int> train_ids, test_ids;
  for (const auto& c : split.train_clients) train_ids.insert(c.client_id);
  for (const auto& c : split.test_clients) test_ids.insert(c.client_id);
  for (int id : test_ids) CHECK(train_ids.count(id) == 0);
  CHECK(train_ids.size() + test_ids.size() == cohort.size());

  const auto none = split_clients(cohort, 0.0, 9);
  CHECK(none.test_clients.empty());
  CHECK(none.train_clients == cohort);

  CHECK(split_clients(cohort, 0.2, 9).test_clients == split.test_clients);
  CHECK_THROWS_AS(split_clients(cohort, 1.5, 9), ConfigError);
}

TEST_CASE("monthly_pools") {
  auto cohort = generate_cohort(small_config(1));
  const auto pools = monthly_pools(cohort, 12);
  std::vector<int> all;
  for (std::size_t m = 0; m < pools.size(); ++m) {
    for (int id : pools[m]) {
      all.push_back(id);
      const auto it = std::find_if(cohort.begin(), cohort.end(), [&](const auto& c) { return c.client_id == id; });
      REQUIRE(it != cohort.end());
      CHECK(it->join_month == static_cast<int>(m));
    }
  }
  std::sort(all.begin(), all.end());
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
  CHECK(all.size() == cohort.size());

  for (auto& c : cohort) c.join_month = 0;
  const auto single = monthly_pools(cohort, 3);
  CHECK(single[0].size() == cohort.size());
  CHECK(single[1].empty());
  CHECK(single[2].empty());

  cohort[0].join_month = 7;
  CHECK_THROWS_AS(monthly_pools(cohort, 3), ConfigError);
}

TEST_CASE("the peak arrival month has the largest pool") {
  int peaks = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CohortConfig cfg;
    cfg.seed = seed;
    const auto split = split_clients(generate_cohort(cfg), 0.2, seed);
    const auto pools = monthly_pools(split.train_clients, cfg.n_months);
    const auto largest = std::max_element(pools.begin(), pools.end(),
                                          [](const auto& a, const auto& b) { return a.size() < b.size(); });
    if (largest - pools.begin() == 6) ++peaks;
  }
  CHECK(peaks >= 8);
}

TEST_CASE("cohort file round trip") {
  const auto cfg = small_config(8);
  const auto cohort = generate_cohort(cfg);
  std::stringstream buf;
  write_cohort(buf, cohort);
  const auto back = read_cohort(buf, 4, 3, cfg.n_months);
  REQUIRE(back.size() == cohort.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].client_id == cohort[i].client_id);
    CHECK(back[i].join_month == cohort[i].join_month);
    REQUIRE(back[i].samples.size() == cohort[i].samples.size());
    for (std::size_t j = 0; j < back[i].samples.size(); ++j) {
      CHECK(back[i].samples[j].symptoms == cohort[i].samples[j].symptoms);
      for (std::size_t k = 0; k < 4; ++k) {
        CHECK(back[i].samples[j].embedding[k] == doctest::Approx(cohort[i].samples[j].embedding[k]).epsilon(1e-15));
      }
    }
  }
}

TEST_CASE("cohort loader rejects invalid files") {
  auto load = [](const std::string& text) {
    std::istringstream in(text);
    return read_cohort(in, 1, 1, 2);
  };
  const std::string good = R"({"id":1,"class":1,"month":0,"samples":[[[0.5],[1],1]]})";
  CHECK(load(good + "\n").size() == 1);

  CHECK_THROWS_AS(load("{not json\n"), FormatError);
  CHECK_THROWS_AS(load(R"({"id":1,"class":1,"month":0,"samples":[[[0.5],[1],0]]})"), FormatError);
  CHECK_THROWS_AS(load(R"({"id":1,"class":1,"month":5,"samples":[[[0.5],[1],1]]})"), FormatError);
  CHECK_THROWS_AS(load(R"({"id":1,"class":1,"month":0,"samples":[[[0.5,1.0],[1],1]]})"), FormatError);
  CHECK_THROWS_AS(load(R"({"id":1,"class":1,"month":0,"samples":[[[0.5],[2],1]]})"), FormatError);
  CHECK_THROWS_AS(load(R"({"id":1,"class":1,"month":0,"samples":[]})"), FormatError);
  CHECK_THROWS_AS(load(good + "\n" + good + "\n"), FormatError);

  try {
    load(good + "\n" + R"({"id":2,"class":0,"month":9,"samples":[[[0.5],[0],0]]})");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("separability increases centralized AUC") {
  const std::vector<double> levels{0.0, 0.5, 1.0, 2.0};
  std::vector<double> mean_auc(levels.size(), 0.0);
  for (std::size_t li = 0; li < levels.size(); ++li) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      CohortConfig cfg;
      cfg.n_positive_clients = 150;
      cfg.n_negative_clients = 450;
      cfg.features = FeatureModel::defaults(8, 10);
      cfg.features.separability = levels[li];
      cfg.seed = seed;
      const auto split = split_clients(generate_cohort(cfg), 0.3, seed);
      const auto train = pooled_samples(split.train_clients);

      ModelSpec spec;
      spec.embed_dim = 8;
      spec.symptom_dim = 10;
      spec.hidden_dims.clear();
      const double lr = 0.5 / static_cast<double>(train.size());
      const auto model = sgd_epochs(init_params(spec, seed), train, lr, 150);
      mean_auc[li] += auc_roc(score_clients(model, split.test_clients)) / 5.0;
    }
  }
  for (std::size_t i = 1; i < levels.size(); ++i) CHECK(mean_auc[i] >= mean_auc[i - 1]);
  CHECK(mean_auc.back() > mean_auc.front() + 0.1);
}
