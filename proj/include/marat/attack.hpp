#pragma once

// l-infinity PGD attacks: cross-entropy, margin-weighted cross-entropy and
// logit-margin, plus the KL ascent used by TRADES training.

#include "marat/mlp.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace marat {

enum class AttackFlavor { ce, weighted_ce, margin };

struct AttackConfig {
  double epsilon = 0.3;
  double step_size = 0.01;
  int steps = 10;
  AttackFlavor flavor = AttackFlavor::ce;
  double alpha = 0.0;  // only read by weighted_ce
  double init_noise_scale = 0.001;
  std::uint64_t seed = 0;

  /// Throws ConfigError. A zero budget is accepted as the no-perturbation case.
  void validate() const;
  /// True when a single step can leave the budget; callers may warn.
  bool step_exceeds_budget() const { return step_size > epsilon; }

  AttackConfig with_flavor(AttackFlavor f, double a = 0.0) const {
    AttackConfig copy = *this;
    copy.flavor = f;
    copy.alpha = a;
    return copy;
  }
  AttackConfig with_seed(std::uint64_t s) const {
    AttackConfig copy = *this;
    copy.seed = s;
    return copy;
  }
};

/// Exact Euclidean projection onto B_inf(center, epsilon) intersected with [0,1]^d.
VectorXd project_feasible(const VectorXd& point, const VectorXd& center, double epsilon);

/// Cross-entropy PGD. Requires cfg.flavor == ce.
VectorXd pgd(const Model& model, const VectorXd& input, int label, const AttackConfig& cfg);

/// PGD ascending s * CE with s = exp(-alpha * margin) recomputed (and held constant) each step.
VectorXd weighted_pgd(const Model& model, const VectorXd& input, int label, const AttackConfig& cfg);

/// PGD ascending the logit margin max_{t != y} z_t - z_y.
VectorXd margin_pgd(const Model& model, const VectorXd& input, int label, const AttackConfig& cfg);

/// Dispatches on cfg.flavor.
VectorXd attack(const Model& model, const VectorXd& input, int label, const AttackConfig& cfg);

/// PGD ascending KL(softmax(reference) || softmax(f(x'))); the TRADES inner maximization.
VectorXd kl_pgd(const Model& model, const VectorXd& input, const VectorXd& reference_logits,
                const AttackConfig& cfg);

struct WeightedPgdTrace {
  std::vector<VectorXd> iterates;  // iterates[0] is the projected noisy start
  std::vector<double> weights;     // weights[k] was applied at step k
  VectorXd result;
};

/// weighted_pgd that also records each step's weight and iterate.
WeightedPgdTrace weighted_pgd_trace(const Model& model, const VectorXd& input, int label, const AttackConfig& cfg);

/// Attacks every example of the batch independently. Example i uses the seed
/// derive_seed(cfg.seed, ids[i]); ids defaults to 0..m-1.
Batch<double> batch_attack(const Model& model, const Batch<double>& batch, const AttackConfig& cfg,
                           std::span<const std::uint64_t> ids = {});

/// TRADES inner maximization for a batch; reference logits are the clean logits.
Batch<double> batch_kl_attack(const Model& model, const Batch<double>& batch, const AttackConfig& cfg,
                              std::span<const std::uint64_t> ids = {});

}  // namespace marat
