#include "helpers.hpp"
#include "marat/attack.hpp"
#include "marat/evaluation.hpp"
#include "marat/weighting.hpp"
#include "oracle/reference.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

using namespace marat;
using marat::testing::random_batch;
using marat::testing::random_model;
using marat::testing::to_vec;

namespace {

bool feasible(const VectorXd& adv, const VectorXd& x, double eps) {
  return (adv - x).cwiseAbs().maxCoeff() <= eps + 1e-12 && adv.minCoeff() >= 0.0 && adv.maxCoeff() <= 1.0;
}

AttackConfig config(double eps, int steps, std::uint64_t seed = 5) {
  AttackConfig cfg;
  cfg.epsilon = eps;
  cfg.steps = steps;
  cfg.seed = seed;
  return cfg;
}

const AttackFlavor kFlavors[] = {AttackFlavor::ce, AttackFlavor::weighted_ce, AttackFlavor::margin};

}  // namespace

TEST_CASE("config validation") {
  AttackConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.step_size = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = AttackConfig{};
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = AttackConfig{};
  cfg.epsilon = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = AttackConfig{}.with_flavor(AttackFlavor::weighted_ce, -1.0);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(config(0.005, 1).step_exceeds_budget());
  const Model model = random_model({3, 2}, 1);
  CHECK_THROWS_AS(pgd(model, VectorXd::Constant(3, 0.5), 0, AttackConfig{}.with_flavor(AttackFlavor::margin)),
                  ConfigError);
}

TEST_CASE("projection onto ball and box") {
  VectorXd x(1), proposal(1);
  x << 0.9;
  proposal << 1.15;
  CHECK(project_feasible(proposal, x, 0.1)(0) == 1.0);
  proposal << 0.5;
  CHECK(project_feasible(proposal, x, 0.1)(0) == doctest::Approx(0.8));
  x << 0.05;
  proposal << -0.2;
  CHECK(project_feasible(proposal, x, 0.3)(0) == 0.0);
}

TEST_CASE("zero-gradient network leaves only the initial noise") {
  const Model zero = Model::zeros(std::vector<int>{4, 3});
  const VectorXd x = VectorXd::Constant(4, 0.5);
  for (AttackFlavor f : kFlavors) {
    const AttackConfig cfg = config(0.3, 1, 77).with_flavor(f, 1.0);
    Rng rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd expected = x;
    for (Index j = 0; j < 4; ++j) expected(j) += 0.001 * normal(rng);
    const VectorXd adv = attack(zero, x, 1, cfg);
    CHECK((adv - expected).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(feasible(adv, x, cfg.epsilon));
  }
}

TEST_CASE("one step on a 1-D linear model moves toward the wrong class") {
  const double w = 1.7;
  Parameters<double> layers{{ColMatrix<double>(2, 1), VectorXd::Zero(2)}};
  layers[0].weight << w, 0.0;
  const Model model(layers);
  VectorXd x(1);
  x << 0.5;

  auto ce = [&](const oracle::Vec& v) { return oracle::loss(oracle::forward(model, v), 1, LossFlavor::cross_entropy); };
  const double slope = oracle::fd_gradient(ce, to_vec(x), 1e-5)[0];
  REQUIRE(slope > 0.0);

  AttackConfig cfg = config(0.3, 1);
  cfg.init_noise_scale = 0.0;
  CHECK(pgd(model, x, 1, cfg)(0) == doctest::Approx(0.5 + cfg.step_size).epsilon(1e-14));
}

TEST_CASE("margin attack on a linear model steps along sign(w_t - w_y)") {
  Parameters<double> layers{{ColMatrix<double>(3, 4), VectorXd::Zero(3)}};
  layers[0].weight << 0.3, -0.2, 0.5, 0.1,  //
      0.9, 0.4, -0.6, 0.2,                   //
      -0.1, 0.8, 0.2, -0.7;
  const Model model(layers);
  const VectorXd x = VectorXd::Constant(4, 0.5);
  AttackConfig cfg = config(0.3, 1).with_flavor(AttackFlavor::margin);
  cfg.init_noise_scale = 0.0;
  for (int y = 0; y < 3; ++y) {
    const VectorXd z = forward(model, x);
    int t = -1;
    for (int k = 0; k < 3; ++k)
      if (k != y && (t < 0 || z(k) > z(t))) t = k;
    const VectorXd dir = (layers[0].weight.row(t) - layers[0].weight.row(y)).transpose();
    const VectorXd step = margin_pgd(model, x, y, cfg) - x;
    for (Index j = 0; j < 4; ++j) CHECK(step(j) == doctest::Approx(cfg.step_size * (dir(j) > 0 ? 1.0 : -1.0)));
  }
}

TEST_CASE("feasibility across flavors, budgets and step counts") {
  const Model model = random_model({6, 8, 3}, 21);
  const Batch<double> batch = random_batch(12, 6, 3, 22);
  for (AttackFlavor f : kFlavors)
    for (double eps : {0.1, 0.3})
      for (int steps : {1, 10, 40}) {
        const AttackConfig cfg = config(eps, steps).with_flavor(f, 1.5);
        const Batch<double> adv = batch_attack(model, batch, cfg);
        for (Index i = 0; i < batch.size(); ++i)
          CHECK(feasible(adv.inputs.row(i).transpose(), batch.inputs.row(i).transpose(), eps));
      }
}

TEST_CASE("weighted attack with alpha zero reproduces pgd bit for bit") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Model model = random_model({5, 7, 3}, 100 + seed);
    const Batch<double> batch = random_batch(6, 5, 3, 200 + seed);
    const AttackConfig cfg = config(0.3, 10, seed);
    const Batch<double> plain = batch_attack(model, batch, cfg);
    const Batch<double> weighted = batch_attack(model, batch, cfg.with_flavor(AttackFlavor::weighted_ce, 0.0));
    CHECK(std::memcmp(plain.inputs.data(), weighted.inputs.data(), sizeof(double) * plain.inputs.size()) == 0);
  }
}

TEST_CASE("positive weights do not change the sign direction") {
  const Model model = random_model({5, 7, 3}, 9);
  const Batch<double> batch = random_batch(8, 5, 3, 10);
  for (double alpha : {0.5, 2.0}) {
    const AttackConfig cfg = config(0.3, 10);
    const Batch<double> plain = batch_attack(model, batch, cfg);
    const Batch<double> weighted = batch_attack(model, batch, cfg.with_flavor(AttackFlavor::weighted_ce, alpha));
    CHECK(plain.inputs == weighted.inputs);
  }
}

TEST_CASE("weighted attack weights match an independent recomputation") {
  const Model model = random_model({4, 6, 2}, 31);
  const Batch<double> batch = random_batch(5, 4, 2, 32);
  const double alpha = 1.3;
  for (Index i = 0; i < batch.size(); ++i) {
    const AttackConfig cfg = config(0.3, 8, 40 + static_cast<std::uint64_t>(i)).with_flavor(AttackFlavor::weighted_ce, alpha);
    const VectorXd x = batch.inputs.row(i).transpose();
    const int y = batch.labels[static_cast<std::size_t>(i)];
    const auto trace = weighted_pgd_trace(model, x, y, cfg);
    REQUIRE(trace.weights.size() == 8);
    REQUIRE(trace.iterates.size() == 9);
    CHECK(trace.result == weighted_pgd(model, x, y, cfg));
    for (std::size_t k = 0; k < trace.weights.size(); ++k) {
      const oracle::Vec z = oracle::forward(model, to_vec(trace.iterates[k]));
      const double top = std::max(z[0], z[1]);
      const double p0 = std::exp(z[0] - top), p1 = std::exp(z[1] - top);
      const double py = (y == 0 ? p0 : p1) / (p0 + p1);
      const double m = py - (1.0 - py);
      CHECK(trace.weights[k] == doctest::Approx(std::exp(-alpha * m)).epsilon(1e-12));
    }
  }
}

TEST_CASE("margin attack beats random noise on a trained net") {
  const Model model = marat::testing::trained_blob_model();
  const Dataset test = marat::testing::two_blobs(100, 999);
  AttackConfig cfg = config(0.2, 20).with_flavor(AttackFlavor::margin);
  cfg.step_size = 0.02;
  const Batch<double> adv = batch_attack(model, test.all(), cfg);

  Rng rng(4);
  std::uniform_int_distribution<int> coin(0, 1);
  long attacked_wrong = 0, noise_wrong = 0;
  for (Index i = 0; i < test.size(); ++i) {
    const VectorXd x = test.example(i);
    VectorXd noisy = x;
    for (Index j = 0; j < x.size(); ++j) noisy(j) += coin(rng) ? cfg.epsilon : -cfg.epsilon;
    noisy = project_feasible(noisy, x, cfg.epsilon);
    attacked_wrong += !is_correct(forward(model, VectorXd(adv.inputs.row(i).transpose())), test.label(i));
    noise_wrong += !is_correct(forward(model, noisy), test.label(i));
  }
  MESSAGE("margin attack errors " << attacked_wrong << ", random-corner errors " << noise_wrong);
  CHECK(attacked_wrong >= noise_wrong);
  CHECK(attacked_wrong > 0);
}

TEST_CASE("batch attack") {
  const Model model = random_model({5, 6, 4}, 51);
  const Batch<double> batch = random_batch(7, 5, 4, 52);
  const AttackConfig cfg = config(0.3, 5, 123);

  SUBCASE("single example equals the scalar attack with the derived seed") {
    const Batch<double> one{batch.inputs.topRows(1), {batch.labels[0]}};
    const Batch<double> adv = batch_attack(model, one, cfg);
    const VectorXd scalar = pgd(model, batch.inputs.row(0).transpose(), batch.labels[0], cfg.with_seed(derive_seed(123, 0)));
    CHECK(VectorXd(adv.inputs.row(0).transpose()) == scalar);
  }
  SUBCASE("permuting inputs and ids permutes outputs") {
    std::vector<std::uint64_t> ids(7);
    std::iota(ids.begin(), ids.end(), 0);
    const Batch<double> base = batch_attack(model, batch, cfg, ids);
    std::vector<std::size_t> perm{3, 6, 0, 5, 1, 4, 2};
    Batch<double> shuffled{RowMatrixXd(7, 5), {}};
    std::vector<std::uint64_t> shuffled_ids;
    for (std::size_t k = 0; k < perm.size(); ++k) {
      shuffled.inputs.row(static_cast<Index>(k)) = batch.inputs.row(static_cast<Index>(perm[k]));
      shuffled.labels.push_back(batch.labels[perm[k]]);
      shuffled_ids.push_back(perm[k]);
    }
    const Batch<double> adv = batch_attack(model, shuffled, cfg, shuffled_ids);
    for (std::size_t k = 0; k < perm.size(); ++k)
      CHECK(adv.inputs.row(static_cast<Index>(k)) == base.inputs.row(static_cast<Index>(perm[k])));
  }
  SUBCASE("deterministic") {
    for (AttackFlavor f : kFlavors) {
      const AttackConfig c = cfg.with_flavor(f, 0.7);
      CHECK(batch_attack(model, batch, c).inputs == batch_attack(model, batch, c).inputs);
    }
    CHECK(batch_kl_attack(model, batch, cfg).inputs == batch_kl_attack(model, batch, cfg).inputs);
  }
  SUBCASE("id count must match") {
    const std::vector<std::uint64_t> ids{1, 2};
    CHECK_THROWS_AS(batch_attack(model, batch, cfg, ids), ConfigError);
  }
}

TEST_CASE("KL attack increases the divergence from the clean prediction") {
  const Model model = random_model({5, 8, 3}, 61);
  const Batch<double> batch = random_batch(10, 5, 3, 62);
  const Batch<double> adv = batch_kl_attack(model, batch, config(0.3, 10));
  for (Index i = 0; i < batch.size(); ++i) {
    const VectorXd x = batch.inputs.row(i).transpose();
    const VectorXd a = adv.inputs.row(i).transpose();
    CHECK(feasible(a, x, 0.3));
    const double kl = oracle::loss(oracle::forward(model, to_vec(a)), 0, LossFlavor::kl_to_reference,
                                   oracle::forward(model, to_vec(x)));
    CHECK(kl > 0.0);
  }
}

TEST_CASE("robust accuracy does not grow with the budget") {
  const Model model = marat::testing::trained_blob_model();
  const Dataset test = marat::testing::two_blobs(100, 777);
  double previous = 1.0;
  for (double eps : {0.05, 0.1, 0.2, 0.3}) {
    AttackConfig cfg = config(eps, 20);
    cfg.step_size = eps / 8.0;
    const double acc = eval_robust(model, test, cfg);
    MESSAGE("eps " << eps << " robust accuracy " << acc);
    CHECK(acc <= previous + 0.01);
    previous = std::min(previous, acc);
  }
}
