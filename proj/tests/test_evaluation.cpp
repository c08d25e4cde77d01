#include "helpers.hpp"
#include "marat/evaluation.hpp"
#include "marat/weighting.hpp"
#include "oracle/reference.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <random>
#include <sstream>

using namespace marat;
using marat::testing::random_model;
using marat::testing::trained_blob_model;
using marat::testing::two_blobs;

namespace {

AttackConfig attack_config(double eps = 0.3, int steps = 10) {
  AttackConfig cfg;
  cfg.epsilon = eps;
  cfg.step_size = eps / 8.0;
  cfg.steps = steps;
  cfg.seed = 21;
  return cfg;
}

Dataset random_dataset(Index n, Index d, int classes, std::uint64_t seed) {
  const auto b = marat::testing::random_batch(n, d, classes, seed);
  return Dataset(b.inputs, b.labels, classes, "random");
}

// Constant classifier: zero weights, bias picks `cls`.
Model constant_model(int inputs, int classes, int cls) {
  Parameters<double> layers{{ColMatrix<double>::Zero(classes, inputs), VectorXd::Zero(classes)}};
  layers[0].bias(cls) = 1.0;
  return Model(layers);
}

}  // namespace

TEST_CASE("natural accuracy") {
  const RowMatrixXd x = RowMatrixXd::Constant(5, 3, 0.4);
  SUBCASE("constant-correct classifier") {
    const Dataset data(x, std::vector<int>(5, 1), 3, "ones");
    CHECK(eval_natural(constant_model(3, 3, 1), data) == 1.0);
  }
  SUBCASE("no label matches") {
    const Dataset data(x, std::vector<int>{0, 2, 0, 2, 2}, 3, "others");
    CHECK(eval_natural(constant_model(3, 3, 1), data) == 0.0);
  }
  SUBCASE("matches an independent recount") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Dataset data = random_dataset(60, 4, 3, seed);
      const Model model = random_model({4, 9, 3}, 50 + seed);
      const double expected =
          static_cast<double>(oracle::count_correct(model, data.features(), data.labels())) / 60.0;
      CHECK(eval_natural(model, data) == expected);
    }
  }
  SUBCASE("empty test sets cannot exist") {
    CHECK_THROWS_AS(Dataset(RowMatrixXd(0, 3), {}, 2, "empty"), DomainError);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(eval_natural(constant_model(4, 3, 0), Dataset(x, std::vector<int>(5, 1), 3, "d")),
                    ConfigError);
  }
}

TEST_CASE("robust accuracy degenerates to natural accuracy without perturbation") {
  const Dataset data = random_dataset(40, 4, 3, 7);
  const Model model = random_model({4, 9, 3}, 8);
  AttackConfig cfg = attack_config(0.0);
  cfg.step_size = 0.01;
  cfg.init_noise_scale = 0.0;
  CHECK(eval_robust(model, data, cfg) == eval_natural(model, data));
}

TEST_CASE("zero-gradient model is unaffected by every attack") {
  const Dataset data = random_dataset(30, 3, 3, 9);
  const Model model = constant_model(3, 3, 2);
  const auto r = evaluate(model, data, attack_config(), {1.0}).front();
  CHECK(r.a_rob == r.a_nat);
  CHECK(r.a_tr == r.a_sa);

  const Dataset one_class(data.features(), std::vector<int>(30, 2), 3, "twos");
  const auto s = evaluate(model, one_class, attack_config(), {1.0}).front();
  CHECK(s.a_rob == 1.0);
  CHECK(s.a_sa == s.a_rob);
  CHECK(s.a_tr == s.a_rob);
}

TEST_CASE("alpha zero collapses every metric onto robust accuracy") {
  const Model model = random_model({4, 9, 3}, 11);
  const Dataset data = random_dataset(50, 4, 3, 12);
  const auto r = evaluate(model, data, attack_config(), {0.0}).front();
  CHECK(r.a_sa == r.a_rob);
  CHECK(r.a_tr == r.a_rob);
  CHECK(r.ind_tr == r.ind_rob);
  for (double w : r.normalized_weight) CHECK(w == 1.0 / 50.0);
}

TEST_CASE("empty alpha list gives natural and robust accuracy only") {
  const Model model = random_model({4, 9, 3}, 11);
  const Dataset data = random_dataset(20, 4, 3, 12);
  const auto reports = evaluate(model, data, attack_config(), {});
  REQUIRE(reports.size() == 1);
  CHECK_FALSE(reports.front().alpha_eval.has_value());
  CHECK(reports.front().a_rob == eval_robust(model, data, attack_config()));
  const auto j = nlohmann::json::parse(report_json(reports.front()));
  CHECK_FALSE(j.contains("a_sa"));
  CHECK(j.contains("a_rob"));
}

TEST_CASE("weighted accuracy arithmetic") {
  CHECK(weighted_accuracy({3.0, 1.0}, {0, 1}) == doctest::Approx(0.25));
  CHECK(weighted_accuracy({1.0, 1.0, 1.0}, {1, 1, 1}) == 1.0);
  CHECK_THROWS_AS(weighted_accuracy({1.0}, {1, 0}), ConfigError);
}

TEST_CASE("importance-sampled accuracy never exceeds robust accuracy") {
  SUBCASE("brute-force covariance on random margin vectors") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<int> len(1, 12);
    std::uniform_real_distribution<double> a(0.0, 3.0);
    for (int trial = 0; trial < 1000; ++trial) {
      const int n = len(rng);
      const double alpha = a(rng);
      std::vector<double> w;
      std::vector<int> ind;
      double plain = 0.0;
      for (int i = 0; i < n; ++i) {
        const double m = u(rng);
        w.push_back(importance_weight(m, WeightConfig{alpha}));
        ind.push_back(m > 0.0 ? 1 : 0);
        plain += ind.back();
      }
      plain /= n;
      CHECK(oracle::weighted_below_unweighted(w, ind));
      CHECK(weighted_accuracy(w, ind) <= plain);
    }
  }
  SUBCASE("on a trained model") {
    const Model model = trained_blob_model();
    const Dataset test = two_blobs(100, 31);
    const auto reports = evaluate(model, test, attack_config(0.2, 10), {0.5, 1.0, 1.5, 2.0});
    for (const auto& r : reports) {
      MESSAGE("alpha " << *r.alpha_eval << ": nat " << r.a_nat << " rob " << r.a_rob << " sa " << r.a_sa << " tr "
                       << r.a_tr);
      CHECK(r.a_sa <= r.a_rob);
      WARN(r.a_tr <= r.a_sa + 0.02);
      WARN(r.a_rob <= r.a_nat);
      for (double v : {r.a_nat, r.a_rob, r.a_sa, r.a_tr}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
      double total = 0.0;
      for (double w : r.normalized_weight) total += w;
      CHECK(std::abs(total - 1.0) < 1e-9);
      CHECK(r.margin.size() == 200);
      CHECK(r.ind_tr.size() == 200);
    }
  }
}

TEST_CASE("single-metric entry points agree with the full report") {
  const Model model = trained_blob_model();
  const Dataset test = two_blobs(30, 32);
  const AttackConfig cfg = attack_config(0.2, 10);
  const auto r = evaluate(model, test, cfg, {1.0}).front();
  CHECK(eval_robust(model, test, cfg) == r.a_rob);
  CHECK(eval_sa(model, test, cfg, 1.0) == r.a_sa);
  CHECK(eval_tr(model, test, cfg, 1.0) == r.a_tr);
}

TEST_CASE("Monte-Carlo sampled accuracy") {
  EvalReport r;
  r.alpha_eval = 1.0;
  SUBCASE("uniform weights, all correct") {
    r.normalized_weight.assign(5, 0.2);
    r.ind_sa.assign(5, 1);
    const auto e = mc_sampled_accuracy(r, 1000, 1);
    CHECK(e.estimate == 1.0);
    CHECK(e.standard_error == 0.0);
  }
  SUBCASE("point mass") {
    r.normalized_weight = {0.0, 0.0, 1.0, 0.0};
    r.ind_sa = {1, 1, 0, 1};
    CHECK(mc_sampled_accuracy(r, 500, 2).estimate == 0.0);
    r.ind_sa = {0, 0, 1, 0};
    CHECK(mc_sampled_accuracy(r, 500, 2).estimate == 1.0);
  }
  SUBCASE("unbiased within four standard errors") {
    const Model model = trained_blob_model();
    const auto report = evaluate(model, two_blobs(100, 33), attack_config(0.25, 10), {2.0}).front();
    for (SampledMetric m : {SampledMetric::sa, SampledMetric::tr}) {
      const auto e = mc_sampled_accuracy(report, 100000, 5, m);
      const double exact = m == SampledMetric::sa ? report.a_sa : report.a_tr;
      MESSAGE("estimate " << e.estimate << " +- " << e.standard_error << " exact " << exact);
      CHECK(std::abs(e.estimate - exact) < 4.0 * e.standard_error + 1e-12);
    }
  }
  SUBCASE("argument checks") {
    r.normalized_weight = {1.0};
    r.ind_sa = {1};
    CHECK_THROWS_AS(mc_sampled_accuracy(r, 0, 1), DomainError);
  }
}

TEST_CASE("weight histograms") {
  SUBCASE("equal weights occupy one bin") {
    const auto h = histogram({0.25, 0.25, 0.25, 0.25}, 5);
    long occupied = 0, total = 0;
    for (long c : h.counts) {
      occupied += c > 0;
      total += c;
    }
    CHECK(occupied == 1);
    CHECK(total == 4);
  }
  SUBCASE("four values, two bins") {
    const auto h = histogram({0.1, 0.2, 0.3, 0.4}, 2);
    CHECK(h.counts == std::vector<long>{2, 2});
    CHECK(h.edges.size() == 3);
    CHECK(h.edges.front() == 0.1);
    CHECK(h.edges.back() == 0.4);
  }
  SUBCASE("argument checks") {
    CHECK_THROWS_AS(histogram({0.1}, 0), DomainError);
    CHECK_THROWS_AS(histogram({}, 3), DomainError);
  }
  SUBCASE("spread grows with alpha") {
    const Model model = trained_blob_model();
    const auto reports = evaluate(model, two_blobs(60, 34), attack_config(0.2, 10), {0.5, 1.0, 2.0});
    double previous = 0.0;
    for (const auto& r : reports) {
      const auto h = weight_histogram(r, 10);
      long total = 0;
      for (long c : h.counts) total += c;
      CHECK(total == 120);
      const double spread = h.edges.back() - h.edges.front();
      CHECK(spread >= previous);
      previous = spread;
    }
  }
}

TEST_CASE("report serialization") {
  const Model model = random_model({4, 9, 3}, 41);
  const Dataset data = random_dataset(6, 4, 3, 42);
  const auto r = evaluate(model, data, attack_config(), {1.5}).front();

  const auto j = nlohmann::json::parse(report_json(r));
  for (const char* key : {"a_nat", "a_rob", "a_sa", "a_tr"}) {
    REQUIRE(j.contains(key));
    CHECK(j[key].get<double>() >= 0.0);
    CHECK(j[key].get<double>() <= 1.0);
  }
  CHECK(j["n"] == 6);
  CHECK(j["config"]["epsilon"] == 0.3);
  CHECK(j["alpha_eval"] == 1.5);

  std::ostringstream csv;
  write_per_example_csv(csv, r);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "index,margin,weight,normalized_weight,ind_rob,ind_sa,ind_tr,adv_loss");
  int rows = 0;
  while (std::getline(lines, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 7);
    ++rows;
  }
  CHECK(rows == 6);

  std::ostringstream hist;
  write_histogram_csv(hist, histogram({0.1, 0.2, 0.3, 0.4}, 2));
  CHECK(hist.str() == "bin_lo,bin_hi,count\n0.1,0.25,2\n0.25,0.4,2\n");
}
