#include "marat/attack.hpp"

#include "marat/weighting.hpp"

#include <cmath>
#include <random>

namespace marat {
namespace {

VectorXd noisy_start(const VectorXd& input, const AttackConfig& cfg) {
  VectorXd start = input;
  if (cfg.init_noise_scale > 0.0) {
    Rng rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index j = 0; j < start.size(); ++j) start(j) += cfg.init_noise_scale * normal(rng);
  }
  return project_feasible(start, input, cfg.epsilon);
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void ascend(VectorXd& current, const VectorXd& input, const VectorXd& gradient, const AttackConfig& cfg) {
  current += cfg.step_size * gradient.unaryExpr(&sign);
  current = project_feasible(current, input, cfg.epsilon);
}

// Shared loop. `alpha` < 0 means unweighted; otherwise the CE gradient is
// scaled by exp(-alpha * margin) of the current iterate.
VectorXd run_pgd(const Model& model, const VectorXd& input, int label, const AttackConfig& cfg, LossFlavor loss,
                 double alpha, const VectorXd& reference, WeightedPgdTrace* trace) {
  if (label < 0 || label >= model.class_count()) throw ConfigError("label out of range");
  VectorXd current = noisy_start(input, cfg);
  if (trace) trace->iterates.push_back(current);
  const WeightConfig weight_cfg{alpha < 0.0 ? 0.0 : alpha};
  for (int k = 0; k < cfg.steps; ++k) {
    auto step = input_gradient(model, current, label, loss, reference);
    if (alpha >= 0.0) {
      const double s = importance_weight(margin(softmax(step.logits), label), weight_cfg);
      step.gradient *= s;
      if (trace) trace->weights.push_back(s);
    }
    ascend(current, input, step.gradient, cfg);
    if (trace) trace->iterates.push_back(current);
  }
  if (trace) trace->result = current;
  return current;
}

void require_flavor(const AttackConfig& cfg, AttackFlavor expected, const char* name) {
  cfg.validate();
  if (cfg.flavor != expected) throw ConfigError(std::string(name) + " called with a mismatched attack flavor");
}

template <typename Fn>
Batch<double> per_example(const Batch<double>& batch, const AttackConfig& cfg, std::span<const std::uint64_t> ids,
                          Fn&& fn) {
  if (!ids.empty() && static_cast<Index>(ids.size()) != batch.size())
    throw ConfigError("example id count does not match batch size");
  Batch<double> out{RowMatrixXd(batch.inputs.rows(), batch.inputs.cols()), batch.labels};
  const Index m = batch.size();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < m; ++i) {
    const std::uint64_t id = ids.empty() ? static_cast<std::uint64_t>(i) : ids[i];
    const AttackConfig local = cfg.with_seed(derive_seed(cfg.seed, id));
    out.inputs.row(i) = fn(i, VectorXd(batch.inputs.row(i).transpose()), local).transpose();
  }
  return out;
}

}  // namespace

void AttackConfig::validate() const {
  if (!std::isfinite(epsilon) || epsilon < 0.0) throw ConfigError("attack epsilon must be finite and >= 0");
  if (!std::isfinite(step_size) || step_size <= 0.0) throw ConfigError("attack step size must be positive");
  if (steps < 1) throw ConfigError("attack needs at least one step");
  if (!std::isfinite(init_noise_scale) || init_noise_scale < 0.0)
    throw ConfigError("attack init noise scale must be >= 0");
  if (flavor == AttackFlavor::weighted_ce && (!std::isfinite(alpha) || alpha < 0.0))
    throw ConfigError("weighted attack needs a finite alpha >= 0");
}

VectorXd project_feasible(const VectorXd& point, const VectorXd& center, double epsilon) {
  VectorXd lo = (center.array() - epsilon).matrix();
  VectorXd hi = (center.array() + epsilon).matrix();
  return point.cwiseMax(lo).cwiseMin(hi).cwiseMax(0.0).cwiseMin(1.0);
}

VectorXd pgd(const Model& model, const VectorXd& input, int label, const AttackConfig& cfg) {
  require_flavor(cfg, AttackFlavor::ce, "pgd");
  return run_pgd(model, input, label, cfg, LossFlavor::cross_entropy, -1.0, {}, nullptr);
}

VectorXd weighted_pgd(const Model& model, const VectorXd& input, int label, const AttackConfig& cfg) {
  require_flavor(cfg, AttackFlavor::weighted_ce, "weighted_pgd");
  return run_pgd(model, input, label, cfg, LossFlavor::cross_entropy, cfg.alpha, {}, nullptr);
}

WeightedPgdTrace weighted_pgd_trace(const Model& model, const VectorXd& input, int label, const AttackConfig& cfg) {
  require_flavor(cfg, AttackFlavor::weighted_ce, "weighted_pgd");
  WeightedPgdTrace trace;
  run_pgd(model, input, label, cfg, LossFlavor::cross_entropy, cfg.alpha, {}, &trace);
  return trace;
}

VectorXd margin_pgd(const Model& model, const VectorXd& input, int label, const AttackConfig& cfg) {
  require_flavor(cfg, AttackFlavor::margin, "margin_pgd");
  if (model.class_count() < 2) throw ConfigError("margin attack needs at least two classes");
  return run_pgd(model, input, label, cfg, LossFlavor::logit_margin, -1.0, {}, nullptr);
}

VectorXd attack(const Model& model, const VectorXd& input, int label, const AttackConfig& cfg) {
  switch (cfg.flavor) {
    case AttackFlavor::ce:
      return pgd(model, input, label, cfg);
    case AttackFlavor::weighted_ce:
      return weighted_pgd(model, input, label, cfg);
    case AttackFlavor::margin:
      return margin_pgd(model, input, label, cfg);
  }
  throw ConfigError("unknown attack flavor");
}

VectorXd kl_pgd(const Model& model, const VectorXd& input, const VectorXd& reference_logits,
                const AttackConfig& cfg) {
  cfg.validate();
  if (reference_logits.size() != model.class_count()) throw ConfigError("reference logits shape mismatch");
  return run_pgd(model, input, 0, cfg, LossFlavor::kl_to_reference, -1.0, reference_logits, nullptr);
}

Batch<double> batch_attack(const Model& model, const Batch<double>& batch, const AttackConfig& cfg,
                           std::span<const std::uint64_t> ids) {
  cfg.validate();
  batch.validate(model.input_dim(), model.class_count());
  return per_example(batch, cfg, ids, [&](Index i, const VectorXd& x, const AttackConfig& local) {
    return attack(model, x, batch.labels[i], local);
  });
}

Batch<double> batch_kl_attack(const Model& model, const Batch<double>& batch, const AttackConfig& cfg,
                              std::span<const std::uint64_t> ids) {
  cfg.validate();
  batch.validate(model.input_dim(), model.class_count());
  return per_example(batch, cfg, ids, [&](Index, const VectorXd& x, const AttackConfig& local) {
    return kl_pgd(model, x, forward(model, x), local);
  });
}

}  // namespace marat
