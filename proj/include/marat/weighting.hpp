#pragma once

// Confidence margin, the exponential importance-weight kernel and weight
// normalization.

#include "marat/common.hpp"

#include <cmath>
#include <string>

namespace marat {

struct WeightConfig {
  double alpha = 0.0;

  void validate() const {
    if (!std::isfinite(alpha) || alpha < 0.0) throw ConfigError("alpha must be finite and nonnegative");
  }
};

/// p(label) - max_{t != label} p(t), in [-1, 1].
template <typename Derived>
typename Derived::Scalar margin(const Eigen::MatrixBase<Derived>& probs, int label) {
  using Scalar = typename Derived::Scalar;
  if (probs.size() < 2) throw ConfigError("margin needs at least two classes");
  if (label < 0 || label >= probs.size()) throw ConfigError("label out of range");
  Scalar best_other = -1;
  for (Eigen::Index t = 0; t < probs.size(); ++t)
    if (t != label && probs(t) > best_other) best_other = probs(t);
  return probs(label) - best_other;
}

/// Correct iff the smallest-index argmax equals the label.
template <typename Derived>
bool is_correct(const Eigen::MatrixBase<Derived>& scores, int label) {
  Eigen::Index top = 0;
  for (Eigen::Index t = 1; t < scores.size(); ++t)
    if (scores(t) > scores(top)) top = t;
  return top == label;
}

/// s = exp(-alpha * margin).
template <typename Scalar>
Scalar importance_weight(Scalar margin_value, const WeightConfig& cfg) {
  if (cfg.alpha == 0.0) return Scalar(1);
  return std::exp(-static_cast<Scalar>(cfg.alpha) * margin_value);
}

template <typename Scalar>
struct WeightVector {
  Vector<Scalar> raw;
  Vector<Scalar> normalized;
};

/// normalized = raw / sum(raw).
template <typename Scalar>
WeightVector<Scalar> normalize(const Vector<Scalar>& raw) {
  if (raw.size() < 1) throw DomainError("cannot normalize an empty weight vector");
  for (Eigen::Index i = 0; i < raw.size(); ++i)
    if (!(raw(i) > Scalar(0)) || !std::isfinite(raw(i)))
      throw DomainError("raw weight " + std::to_string(i) + " is not a finite positive number");
  return {raw, raw / raw.sum()};
}

}  // namespace marat
