#pragma once

// Training regimes: natural, adversarial (AT), natural+adversarial combined,
// TRADES, and the margin-weighted variants of AT and TRADES.

#include "marat/attack.hpp"
#include "marat/data.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace marat {

enum class Regime { natural, at, combined, trades, weighted_at, weighted_trades };

/// Which part of the TRADES objective the importance weight multiplies.
enum class TradesWeighting { whole_loss, kl_only };

std::string to_string(Regime r);
Regime parse_regime(const std::string& s);

struct TrainConfig {
  Regime regime = Regime::natural;
  int epochs = 1;
  int batch_size = 128;
  double lr = 0.1;
  AttackConfig attack;
  std::optional<double> alpha_train;     // weighted regimes
  std::optional<double> lambda_inv;      // TRADES regimes (1 / lambda)
  std::optional<double> combine_lambda;  // combined regime
  TradesWeighting trades_weighting = TradesWeighting::whole_loss;
  std::uint64_t seed = 0;

  /// Throws ConfigError for missing or invalid regime-specific fields.
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double weighted_loss = 0.0;
  double raw_loss = 0.0;
  double train_acc = 0.0;
  double mean_margin = 0.0;
  double mean_weight = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

/// CSV: epoch,weighted_loss,raw_loss,train_acc,mean_margin,mean_weight
void write_train_log_csv(std::ostream& out, const TrainLog& log);

struct TrainResult {
  Model model;
  TrainLog log;
};

/// Plain SGD over seeded shuffled minibatches. Loss, accuracy and margin
/// statistics in the log are measured at the points the step was taken on
/// (adversarial points for adversarial regimes), before the update.
TrainResult train(const Model& model, const Dataset& data, const TrainConfig& cfg);

/// Statistics of one parameter step.
struct StepStats {
  Vector<double> weights;   // per-example importance weights used in the step
  Vector<double> raw_loss;  // per-example unweighted objective
  Vector<double> margins;   // at the weighting point
  std::vector<int> correct;
};

/// Computes one batch gradient for the configured regime. `ids` seeds the attacks.
Parameters<double> batch_gradient(const Model& model, const Batch<double>& batch, const TrainConfig& cfg,
                                  std::span<const std::uint64_t> ids, StepStats* stats = nullptr);

struct TradesLoss {
  double value = 0.0;
  Parameters<double> gradient;
  Vector<double> per_example;  // CE + lambda_inv * KL, unweighted
};

/// (1/m) sum_i w_i (CE(f(x_i), y_i) + lambda_inv KL(p(x_i) || p(x'_i))) and its gradient,
/// flowing through both the clean and the adversarial forward passes.
/// With kl_only weighting the weight multiplies only the KL term.
TradesLoss trades_batch_loss(const Model& model, const Batch<double>& batch, const Batch<double>& adversarial,
                             double lambda_inv, const Vector<double>& weights,
                             TradesWeighting weighting = TradesWeighting::whole_loss);

enum class BatchSampling { with_replacement, without_replacement };

struct UnbiasednessResult {
  double full_batch_value = 0.0;
  double minibatch_mean = 0.0;
  double abs_difference = 0.0;
  double standard_error = 0.0;
  double z_score = 0.0;
};

/// Compares the full-data weighted adversarial loss with the mean of `trials`
/// minibatch estimates of size m. Each example's adversarial point is fixed
/// by its derived seed, so it is computed once.
UnbiasednessResult minibatch_unbiasedness_check(const Model& model, const Dataset& data, double alpha,
                                                const AttackConfig& attack_cfg, int trials, Index m,
                                                std::uint64_t seed,
                                                BatchSampling sampling = BatchSampling::with_replacement);

}  // namespace marat
