#include "app/selfcheck.hpp"

#include "marat/dro.hpp"
#include "marat/evaluation.hpp"
#include "marat/training.hpp"
#include "marat/weighting.hpp"
#include "oracle/reference.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <ostream>
#include <sstream>

namespace marat::app {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Model seeded_model(const std::vector<int>& widths, std::uint64_t seed) {
  Model base = Model::glorot(widths, seed);
  Parameters<double> layers = base.layers();
  Rng rng(derive_seed(seed, 1));
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& layer : layers)
    for (Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = u(rng);
  return Model(std::move(layers));
}

Dataset blobs(int per_class, std::uint64_t seed, double sigma) {
  RowMatrixXd centers(2, 2);
  centers << 0.3, 0.3, 0.7, 0.7;
  return synth_gaussians(per_class, centers, sigma, seed);
}

RowMatrixXd random_inputs(Index m, Index d, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RowMatrixXd x(m, d);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < d; ++j) x(i, j) = u(rng);
  return x;
}

Outcome gradients() {
  double worst = 0.0;
  long compared = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Model model = seeded_model({5, 7, 6, 3}, seed);
    const RowMatrixXd x = random_inputs(4, 5, derive_seed(seed, 2));
    const std::vector<int> y{0, 1, 2, 1};
    const std::vector<double> w{0.5, 1.0, 2.0, 1.5};
    const VectorXd wv = Eigen::Map<const VectorXd>(w.data(), 4);
    Batch<double> batch{x, y};
    const auto analytic = grad_params(model, batch, LossSpec<double>::cross_entropy(), wv);
    const auto numeric = oracle::fd_param_gradient(
        model,
        [&](const Model& m) { return oracle::weighted_objective(m, x, y, LossFlavor::cross_entropy, nullptr, w); },
        1e-6);
    const auto c = oracle::compare(analytic, numeric, 1e-7);
    worst = std::max(worst, c.max_rel_error);
    compared += c.compared;

    const VectorXd x0 = x.row(0).transpose();
    const VectorXd gi = input_gradient(model, x0, 1, LossFlavor::cross_entropy).gradient;
    const oracle::Vec xv(x0.data(), x0.data() + x0.size());
    const auto fd = oracle::fd_gradient(
        [&](const oracle::Vec& v) { return oracle::loss(oracle::forward(model, v), 1, LossFlavor::cross_entropy); },
        xv, 1e-6);
    const auto ci = oracle::compare(oracle::Vec(gi.data(), gi.data() + gi.size()), fd, 1e-7);
    worst = std::max(worst, ci.max_rel_error);
    compared += ci.compared;
  }
  std::ostringstream d;
  d << "max relative error " << worst << " over " << compared << " components";
  return {worst < 1e-4 && compared > 0, d.str()};
}

Outcome attacks() {
  long checked = 0;
  bool ok = true;
  const Dataset data = blobs(10, 3, 0.1);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Model model = seeded_model({2, 8, 2}, seed);
    for (double eps : {0.05, 0.3}) {
      AttackConfig cfg;
      cfg.epsilon = eps;
      cfg.step_size = 0.05;
      cfg.steps = 10;
      cfg.seed = seed;
      for (auto flavor : {AttackFlavor::ce, AttackFlavor::weighted_ce, AttackFlavor::margin}) {
        const Batch<double> adv = batch_attack(model, data.all(), cfg.with_flavor(flavor, 1.0));
        const RowMatrixXd diff = adv.inputs - data.features();
        ok = ok && diff.cwiseAbs().maxCoeff() <= eps + 1e-12 && adv.inputs.minCoeff() >= 0.0 &&
             adv.inputs.maxCoeff() <= 1.0;
        ++checked;
      }
      const Batch<double> plain = batch_attack(model, data.all(), cfg);
      const Batch<double> zero = batch_attack(model, data.all(), cfg.with_flavor(AttackFlavor::weighted_ce, 0.0));
      ok = ok && plain.inputs.size() == zero.inputs.size() &&
           std::memcmp(plain.inputs.data(), zero.inputs.data(), sizeof(double) * plain.inputs.size()) == 0;
    }
  }
  return {ok, std::to_string(checked) + " attack batches inside the budget, alpha = 0 bitwise equal"};
}

Outcome covariance() {
  Rng rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int agree = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + trial % 30;
    std::vector<double> margins(static_cast<std::size_t>(n));
    std::vector<int> ind(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      margins[static_cast<std::size_t>(i)] = u(rng);
      ind[static_cast<std::size_t>(i)] = margins[static_cast<std::size_t>(i)] > 0 ? 1 : 0;
    }
    for (double alpha : {0.5, 1.0, 2.0}) {
      std::vector<double> s;
      for (double m : margins) s.push_back(importance_weight(m, WeightConfig{alpha}));
      double mean = 0.0;
      for (int v : ind) mean += v;
      mean /= n;
      const bool below = weighted_accuracy(s, ind) <= mean + 1e-12;
      if (below && oracle::weighted_below_unweighted(s, ind)) ++agree;
    }
  }
  return {agree == 3000, std::to_string(agree) + " / 3000 weighted accuracies at or below the plain mean"};
}

Outcome dro() {
  Rng rng(7);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::uniform_real_distribution<double> r(0.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + trial % 10;
    VectorXd l(n);
    for (int i = 0; i < n; ++i) l(i) = u(rng);
    const double rho = r(rng);
    const auto sol = solve_dro_weights(l, rho);
    const double ref = oracle::dro_enumeration_value(oracle::Vec(l.data(), l.data() + n), rho);
    worst = std::max(worst, std::abs(sol.objective - ref) / std::max(1.0, std::abs(ref)));
  }
  const oracle::Vec small{1.0, 2.0, 4.0};
  VectorXd lv(3);
  lv << 1.0, 2.0, 4.0;
  const double grid_gap = std::abs(solve_dro_weights(lv, 0.05).objective - oracle::dro_grid_value(small, 0.05, 1000));
  std::ostringstream d;
  d << "enumeration gap " << worst << ", grid gap " << grid_gap;
  return {worst < 1e-6 && grid_gap < 1e-3, d.str()};
}

Outcome unbiasedness() {
  const Dataset data = blobs(40, 11, 0.15);
  AttackConfig attack;
  attack.epsilon = 0.1;
  attack.step_size = 0.02;
  attack.steps = 5;
  attack.seed = 9;
  const auto res = minibatch_unbiasedness_check(seeded_model({2, 8, 2}, 11), data, 2.0, attack, 1000, 8, 12);
  std::ostringstream d;
  d << "z = " << res.z_score;
  return {std::abs(res.z_score) < 4.0, d.str()};
}

}  // namespace

bool run_selfcheck(std::ostream& out) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> suites{
      {"gradients", gradients}, {"attacks", attacks}, {"covariance", covariance},
      {"dro", dro},             {"unbiasedness", unbiasedness}};
  bool all = true;
  for (const auto& [name, fn] : suites) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    all = all && o.pass;
    out << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << "\n";
  }
  return all;
}

}  // namespace marat::app
