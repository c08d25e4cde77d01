#include "marat/training.hpp"

#include "marat/csv.hpp"
#include "marat/weighting.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace marat {
namespace {

bool is_weighted(Regime r) { return r == Regime::weighted_at || r == Regime::weighted_trades; }
bool is_trades(Regime r) { return r == Regime::trades || r == Regime::weighted_trades; }
bool is_adversarial(Regime r) { return r != Regime::natural; }

void require_positive(const std::optional<double>& v, const char* field, Regime r) {
  if (!v) throw ConfigError(std::string("regime ") + to_string(r) + " requires " + field);
  if (!std::isfinite(*v) || *v <= 0.0) throw ConfigError(std::string(field) + " must be positive");
}

// Margins, importance weights and correctness from a batch of logits.
void fill_point_stats(const RowMatrixXd& logits, const std::vector<int>& labels, double alpha, StepStats& stats) {
  const Index m = logits.rows();
  stats.margins.resize(m);
  stats.weights.resize(m);
  stats.correct.assign(static_cast<std::size_t>(m), 0);
  const WeightConfig wc{alpha};
  for (Index i = 0; i < m; ++i) {
    const VectorXd probs = softmax(logits.row(i).transpose());
    stats.margins(i) = margin(probs, labels[static_cast<std::size_t>(i)]);
    stats.weights(i) = importance_weight(stats.margins(i), wc);
    stats.correct[static_cast<std::size_t>(i)] = is_correct(probs, labels[static_cast<std::size_t>(i)]) ? 1 : 0;
  }
}

}  // namespace

std::string to_string(Regime r) {
  switch (r) {
    case Regime::natural: return "natural";
    case Regime::at: return "at";
    case Regime::combined: return "combined";
    case Regime::trades: return "trades";
    case Regime::weighted_at: return "weighted-at";
    case Regime::weighted_trades: return "weighted-trades";
  }
  return "?";
}

Regime parse_regime(const std::string& s) {
  for (Regime r : {Regime::natural, Regime::at, Regime::combined, Regime::trades, Regime::weighted_at,
                   Regime::weighted_trades})
    if (to_string(r) == s) return r;
  throw ConfigError("unknown training regime '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!std::isfinite(lr) || lr <= 0.0) throw ConfigError("lr must be positive");
  if (is_weighted(regime)) {
    if (!alpha_train) throw ConfigError("regime " + to_string(regime) + " requires alpha_train");
    WeightConfig{*alpha_train}.validate();
  }
  if (is_trades(regime)) require_positive(lambda_inv, "lambda_inv", regime);
  if (regime == Regime::combined) require_positive(combine_lambda, "combine_lambda", regime);
  if (is_adversarial(regime)) attack.validate();
}

void write_train_log_csv(std::ostream& out, const TrainLog& log) {
  out << "epoch,weighted_loss,raw_loss,train_acc,mean_margin,mean_weight\n";
  for (const auto& r : log.epochs)
    out << r.epoch << ',' << format_double(r.weighted_loss) << ',' << format_double(r.raw_loss) << ','
        << format_double(r.train_acc) << ',' << format_double(r.mean_margin) << ',' << format_double(r.mean_weight)
        << '\n';
}

TradesLoss trades_batch_loss(const Model& model, const Batch<double>& batch, const Batch<double>& adversarial,
                             double lambda_inv, const Vector<double>& weights, TradesWeighting weighting) {
  batch.validate(model.input_dim(), model.class_count());
  adversarial.validate(model.input_dim(), model.class_count());
  if (adversarial.size() != batch.size()) throw ConfigError("adversarial batch size mismatch");
  if (weights.size() != batch.size()) throw ConfigError("weight count does not match batch size");
  if (!weights.allFinite() || (weights.array() < 0.0).any()) throw DomainError("weights must be nonnegative");
  if (!std::isfinite(lambda_inv) || lambda_inv < 0.0) throw DomainError("lambda_inv must be nonnegative");

  const auto clean = detail::forward_trace(model, batch.inputs);
  const auto adv = detail::forward_trace(model, adversarial.inputs);
  const RowMatrixXd& z = clean.pre_activations.back();
  const RowMatrixXd& za = adv.pre_activations.back();
  const Index m = batch.size();
  const double inv_m = 1.0 / static_cast<double>(m);

  TradesLoss out;
  out.per_example.resize(m);
  RowMatrixXd delta_clean(m, z.cols());
  RowMatrixXd delta_adv(m, z.cols());
  for (Index i = 0; i < m; ++i) {
    const int y = batch.labels[static_cast<std::size_t>(i)];
    const double lse_c = detail::log_sum_exp(z.row(i));
    const double lse_a = detail::log_sum_exp(za.row(i));
    const VectorXd log_p = (z.row(i).array() - lse_c).transpose();
    const VectorXd log_q = (za.row(i).array() - lse_a).transpose();
    const VectorXd p = log_p.array().exp();
    const VectorXd q = log_q.array().exp();
    const VectorXd log_ratio = log_p - log_q;
    const double ce = lse_c - z(i, y);
    const double kl = p.dot(log_ratio);

    const double kl_scale = weights(i) * inv_m * lambda_inv;
    const double ce_scale = (weighting == TradesWeighting::whole_loss ? weights(i) : 1.0) * inv_m;

    VectorXd d_ce = p;
    d_ce(y) -= 1.0;
    const VectorXd d_kl_clean = (p.array() * (log_ratio.array() - kl)).matrix();
    delta_clean.row(i) = (ce_scale * d_ce + kl_scale * d_kl_clean).transpose();
    delta_adv.row(i) = (kl_scale * (q - p)).transpose();

    out.per_example(i) = ce + lambda_inv * kl;
    out.value += ce_scale * ce + kl_scale * kl;
  }
  out.gradient = accumulate(detail::backward(model, clean, std::move(delta_clean)),
                            detail::backward(model, adv, std::move(delta_adv)));
  return out;
}

Parameters<double> batch_gradient(const Model& model, const Batch<double>& batch, const TrainConfig& cfg,
                                  std::span<const std::uint64_t> ids, StepStats* stats) {
  StepStats local;
  StepStats& st = stats ? *stats : local;
  const auto ce = LossSpec<double>::cross_entropy();
  const double alpha = is_weighted(cfg.regime) ? *cfg.alpha_train : 0.0;

  switch (cfg.regime) {
    case Regime::natural: {
      const RowMatrixXd logits = forward(model, batch.inputs);
      fill_point_stats(logits, batch.labels, 0.0, st);
      st.raw_loss = per_example_loss(logits, batch.labels, ce);
      return grad_params(model, batch, ce, st.weights);
    }
    case Regime::at:
    case Regime::weighted_at: {
      const AttackConfig acfg = cfg.regime == Regime::at ? cfg.attack.with_flavor(AttackFlavor::ce)
                                                         : cfg.attack.with_flavor(AttackFlavor::weighted_ce, alpha);
      const Batch<double> adv = batch_attack(model, batch, acfg, ids);
      const RowMatrixXd logits = forward(model, adv.inputs);
      fill_point_stats(logits, adv.labels, alpha, st);
      st.raw_loss = per_example_loss(logits, adv.labels, ce);
      return grad_params(model, adv, ce, st.weights);
    }
    case Regime::combined: {
      const Batch<double> adv = batch_attack(model, batch, cfg.attack.with_flavor(AttackFlavor::ce), ids);
      const RowMatrixXd logits = forward(model, adv.inputs);
      fill_point_stats(logits, adv.labels, 0.0, st);
      const double lambda = *cfg.combine_lambda;
      st.raw_loss = per_example_loss(forward(model, batch.inputs), batch.labels, ce) +
                    lambda * per_example_loss(logits, adv.labels, ce);
      return accumulate(grad_params(model, batch, ce, st.weights), grad_params(model, adv, ce, st.weights), lambda);
    }
    case Regime::trades:
    case Regime::weighted_trades: {
      const Batch<double> adv = batch_kl_attack(model, batch, cfg.attack, ids);
      fill_point_stats(forward(model, adv.inputs), adv.labels, alpha, st);
      auto loss = trades_batch_loss(model, batch, adv, *cfg.lambda_inv, st.weights, cfg.trades_weighting);
      st.raw_loss = loss.per_example;
      return std::move(loss.gradient);
    }
  }
  throw ConfigError("unknown regime");
}

TrainResult train(const Model& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.dim() != model.input_dim()) throw ConfigError("dataset width does not match model input");
  if (data.class_count() > model.class_count()) throw ConfigError("dataset has more classes than the model");

  TrainResult result{model, {}};
  const auto n = static_cast<std::uint64_t>(data.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double weighted_sum = 0.0, raw_sum = 0.0, margin_sum = 0.0, weight_sum = 0.0;
    long correct = 0;
    for (const auto& chunk : minibatch_indices(data.size(), cfg.batch_size, cfg.seed, static_cast<std::uint64_t>(epoch))) {
      std::vector<std::uint64_t> ids;
      ids.reserve(chunk.size());
      for (auto idx : chunk) ids.push_back(static_cast<std::uint64_t>(epoch) * n + idx);
      StepStats st;
      const auto grad = batch_gradient(result.model, data.batch(chunk), cfg, ids, &st);
      result.model = sgd_step(result.model, grad, cfg.lr);

      raw_sum += st.raw_loss.sum();
      weighted_sum += st.weights.dot(st.raw_loss);
      margin_sum += st.margins.sum();
      weight_sum += st.weights.sum();
      for (int c : st.correct) correct += c;
    }
    const double count = static_cast<double>(n);
    result.log.epochs.push_back(
        {epoch + 1, weighted_sum / count, raw_sum / count, correct / count, margin_sum / count, weight_sum / count});
  }
  return result;
}

UnbiasednessResult minibatch_unbiasedness_check(const Model& model, const Dataset& data, double alpha,
                                                const AttackConfig& attack_cfg, int trials, Index m,
                                                std::uint64_t seed, BatchSampling sampling) {
  if (trials < 30) throw DomainError("unbiasedness check needs at least 30 trials");
  if (m < 1 || (sampling == BatchSampling::without_replacement && m > data.size()))
    throw DomainError("minibatch size out of range");
  const WeightConfig wc{alpha};
  wc.validate();
  const AttackConfig acfg = attack_cfg.with_flavor(AttackFlavor::weighted_ce, alpha);
  acfg.validate();

  const Index n = data.size();
  VectorXd values(n);
  for (Index i = 0; i < n; ++i) {
    const AttackConfig local = acfg.with_seed(derive_seed(acfg.seed, static_cast<std::uint64_t>(i)));
    const VectorXd adv = weighted_pgd(model, data.example(i), data.label(i), local);
    const VectorXd logits = forward(model, adv);
    const double s = importance_weight(margin(softmax(logits), data.label(i)), wc);
    values(i) = s * example_loss(logits, data.label(i), LossFlavor::cross_entropy, logits);
  }

  UnbiasednessResult out;
  double total = 0.0;
  for (Index i = 0; i < n; ++i) total += values(i);
  out.full_batch_value = total / static_cast<double>(n);

  Rng rng(seed);
  std::uniform_int_distribution<Index> pick(0, n - 1);
  double mean = 0.0, m2 = 0.0;
  for (int t = 0; t < trials; ++t) {
    double sum = 0.0;
    if (sampling == BatchSampling::with_replacement) {
      for (Index k = 0; k < m; ++k) sum += values(pick(rng));
    } else {
      for (auto idx : subsample_indices(n, m, derive_seed(seed, static_cast<std::uint64_t>(t))))
        sum += values(static_cast<Index>(idx));
    }
    const double estimate = sum / static_cast<double>(m);
    const double delta = estimate - mean;
    mean += delta / (t + 1);
    m2 += delta * (estimate - mean);
  }
  out.minibatch_mean = mean;
  out.abs_difference = std::abs(mean - out.full_batch_value);
  out.standard_error = std::sqrt(m2 / (trials - 1) / trials);
  if (out.standard_error > 0.0)
    out.z_score = (mean - out.full_batch_value) / out.standard_error;
  else
    out.z_score = out.abs_difference == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(),
                                                                   mean - out.full_batch_value);
  return out;
}

}  // namespace marat
