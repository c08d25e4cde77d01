#pragma once

// Multilayer perceptron with rectifier hidden layers and raw-logit output,
// plus the losses and exact gradients used by the attacks and trainers.

#include "marat/common.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace marat {

template <typename Scalar>
struct DenseLayer {
  ColMatrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;       // out

  Index in_dim() const { return weight.cols(); }
  Index out_dim() const { return weight.rows(); }

  bool operator==(const DenseLayer& other) const {
    return weight.rows() == other.weight.rows() && weight.cols() == other.weight.cols() &&
           bias.size() == other.bias.size() && weight == other.weight && bias == other.bias;
  }
};

/// Ordered layer list. Also used as the shape of a parameter gradient.
template <typename Scalar>
using Parameters = std::vector<DenseLayer<Scalar>>;

template <typename Scalar>
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(Parameters<Scalar> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ConfigError("model needs at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& layer = layers_[i];
      if (layer.bias.size() != layer.out_dim())
        throw ConfigError("layer " + std::to_string(i) + ": bias length does not match output width");
      if (i > 0 && layers_[i - 1].out_dim() != layer.in_dim())
        throw ConfigError("layer " + std::to_string(i) + ": input width does not match previous layer");
      if (!layer.weight.allFinite() || !layer.bias.allFinite())
        throw ConfigError("layer " + std::to_string(i) + ": non-finite parameter");
    }
  }

  /// Glorot-uniform weights, zero biases. `widths` = {input, hidden..., classes}.
  static Mlp glorot(std::span<const int> widths, std::uint64_t seed) {
    check_widths(widths);
    Rng rng(seed);
    Parameters<Scalar> layers;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const int in = widths[i];
      const int out = widths[i + 1];
      const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      DenseLayer<Scalar> layer{ColMatrix<Scalar>(out, in), Vector<Scalar>::Zero(out)};
      for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) layer.weight(r, c) = static_cast<Scalar>(dist(rng));
      layers.push_back(std::move(layer));
    }
    return Mlp(std::move(layers));
  }

  static Mlp zeros(std::span<const int> widths) {
    check_widths(widths);
    Parameters<Scalar> layers;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
      layers.push_back({ColMatrix<Scalar>::Zero(widths[i + 1], widths[i]), Vector<Scalar>::Zero(widths[i + 1])});
    return Mlp(std::move(layers));
  }

  const Parameters<Scalar>& layers() const { return layers_; }
  Index depth() const { return static_cast<Index>(layers_.size()); }
  Index input_dim() const { return layers_.front().in_dim(); }
  Index class_count() const { return layers_.back().out_dim(); }

  std::vector<int> widths() const {
    std::vector<int> w{static_cast<int>(input_dim())};
    for (const auto& layer : layers_) w.push_back(static_cast<int>(layer.out_dim()));
    return w;
  }

  bool operator==(const Mlp& other) const { return layers_ == other.layers_; }

 private:
  static void check_widths(std::span<const int> widths) {
    if (widths.size() < 2) throw ConfigError("model widths need an input and an output size");
    for (int w : widths)
      if (w < 1) throw ConfigError("model widths must be positive");
  }

  Parameters<Scalar> layers_;
};

using Model = Mlp<double>;

template <typename Scalar>
struct Batch {
  RowMatrix<Scalar> inputs;  // m x d, entries in [0,1]
  std::vector<int> labels;   // m

  Index size() const { return inputs.rows(); }

  void validate(Index input_dim, Index class_count) const {
    if (inputs.rows() < 1) throw ConfigError("batch is empty");
    if (static_cast<Index>(labels.size()) != inputs.rows()) throw ConfigError("batch label count mismatch");
    if (inputs.cols() != input_dim) throw ConfigError("batch input width does not match model");
    for (int y : labels)
      if (y < 0 || y >= class_count) throw ConfigError("batch label out of range");
  }
};

enum class LossFlavor { cross_entropy, kl_to_reference, logit_margin };

template <typename Scalar>
struct LossSpec {
  LossFlavor flavor = LossFlavor::cross_entropy;
  /// Reference logits (one row per example); present iff flavor is kl_to_reference.
  std::optional<RowMatrix<Scalar>> reference;

  static LossSpec cross_entropy() { return {LossFlavor::cross_entropy, std::nullopt}; }
  static LossSpec logit_margin() { return {LossFlavor::logit_margin, std::nullopt}; }
  static LossSpec kl_to(RowMatrix<Scalar> reference_logits) {
    return {LossFlavor::kl_to_reference, std::move(reference_logits)};
  }

  void validate(Index rows, Index classes) const {
    const bool needs_ref = flavor == LossFlavor::kl_to_reference;
    if (needs_ref != reference.has_value())
      throw ConfigError("reference logits must be given exactly for the kl-to-reference loss");
    if (needs_ref && (reference->rows() != rows || reference->cols() != classes))
      throw ConfigError("reference logits shape does not match logits");
  }
};

namespace detail {

template <typename Scalar>
void check_input_width(const Mlp<Scalar>& model, Index width) {
  if (width != model.input_dim())
    throw ConfigError("input width " + std::to_string(width) + " does not match model input " +
                      std::to_string(model.input_dim()));
}

template <typename Derived>
auto log_sum_exp(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  const Scalar top = z.maxCoeff();
  return top + std::log((z.array() - top).exp().sum());
}

/// Index of the largest entry other than `label` (smallest index on ties).
template <typename Derived>
Index runner_up(const Eigen::MatrixBase<Derived>& z, int label) {
  Index best = -1;
  for (Index t = 0; t < z.size(); ++t) {
    if (t == label) continue;
    if (best < 0 || z(t) > z(best)) best = t;
  }
  return best;
}

/// Layer activations of a batch forward pass; activations[0] is the input.
template <typename Scalar>
struct ForwardTrace {
  std::vector<RowMatrix<Scalar>> activations;
  std::vector<RowMatrix<Scalar>> pre_activations;
};

template <typename Scalar>
ForwardTrace<Scalar> forward_trace(const Mlp<Scalar>& model, const RowMatrix<Scalar>& inputs) {
  check_input_width(model, inputs.cols());
  ForwardTrace<Scalar> trace;
  trace.activations.push_back(inputs);
  const auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    RowMatrix<Scalar> z = trace.activations.back() * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias.transpose();
    trace.pre_activations.push_back(z);
    if (l + 1 < layers.size()) trace.activations.push_back(z.cwiseMax(Scalar(0)));
  }
  return trace;
}

/// Backpropagates d(objective)/d(logits) to parameter gradients and, optionally, input gradients.
template <typename Scalar>
Parameters<Scalar> backward(const Mlp<Scalar>& model, const ForwardTrace<Scalar>& trace,
                            RowMatrix<Scalar> delta, RowMatrix<Scalar>* input_grad = nullptr) {
  const auto& layers = model.layers();
  Parameters<Scalar> grad(layers.size());
  for (std::size_t l = layers.size(); l-- > 0;) {
    grad[l].weight = delta.transpose() * trace.activations[l];
    grad[l].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      RowMatrix<Scalar> upstream = delta * layers[l].weight;
      const auto& z = trace.pre_activations[l - 1];
      delta = (z.array() > Scalar(0)).select(upstream, Scalar(0));
    } else if (input_grad != nullptr) {
      *input_grad = delta * layers[0].weight;
    }
  }
  return grad;
}

}  // namespace detail

template <typename Scalar>
using Same = std::type_identity_t<Scalar>;

template <typename Scalar>
RowMatrix<Scalar> forward(const Mlp<Scalar>& model, const Same<RowMatrix<Scalar>>& inputs) {
  return detail::forward_trace(model, inputs).pre_activations.back();
}

/// Single-example forward pass.
template <typename Scalar, typename Derived>
  requires(Derived::ColsAtCompileTime == 1)
Vector<Scalar> forward(const Mlp<Scalar>& model, const Eigen::MatrixBase<Derived>& input) {
  detail::check_input_width(model, input.size());
  Vector<Scalar> a = input;
  const auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Vector<Scalar> z = layers[l].weight * a + layers[l].bias;
    a = (l + 1 < layers.size()) ? Vector<Scalar>(z.cwiseMax(Scalar(0))) : z;
  }
  return a;
}

template <typename Derived>
auto softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return Vector<Scalar>(e / e.sum());
}

/// Row-wise softmax with max subtraction.
template <typename Scalar>
RowMatrix<Scalar> softmax_probs(const RowMatrix<Scalar>& logits) {
  if (!logits.allFinite()) throw DomainError("softmax of non-finite logits");
  RowMatrix<Scalar> probs(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) probs.row(i) = softmax(logits.row(i).transpose()).transpose();
  return probs;
}

/// Loss of one logit row. `reference` is only read for the kl flavor.
template <typename Derived, typename RefDerived>
typename Derived::Scalar example_loss(const Eigen::MatrixBase<Derived>& z, int label, LossFlavor flavor,
                                      const Eigen::MatrixBase<RefDerived>& reference) {
  using Scalar = typename Derived::Scalar;
  switch (flavor) {
    case LossFlavor::cross_entropy:
      return detail::log_sum_exp(z) - z(label);
    case LossFlavor::kl_to_reference: {
      const Vector<Scalar> log_q = z.array() - detail::log_sum_exp(z);
      const Vector<Scalar> log_p = reference.array() - detail::log_sum_exp(reference);
      return (log_p.array().exp() * (log_p - log_q).array()).sum();
    }
    case LossFlavor::logit_margin:
      return z(detail::runner_up(z, label)) - z(label);
  }
  return Scalar(0);
}

/// d(loss)/d(logits) for one row.
template <typename Derived, typename RefDerived>
Vector<typename Derived::Scalar> example_loss_gradient(const Eigen::MatrixBase<Derived>& z, int label,
                                                       LossFlavor flavor,
                                                       const Eigen::MatrixBase<RefDerived>& reference) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> g;
  switch (flavor) {
    case LossFlavor::cross_entropy:
      g = softmax(z);
      g(label) -= Scalar(1);
      break;
    case LossFlavor::kl_to_reference:
      g = softmax(z) - softmax(reference);
      break;
    case LossFlavor::logit_margin:
      g = Vector<Scalar>::Zero(z.size());
      g(detail::runner_up(z, label)) = Scalar(1);
      g(label) = Scalar(-1);
      break;
  }
  return g;
}

template <typename Scalar>
Vector<Scalar> per_example_loss(const RowMatrix<Scalar>& logits, const std::vector<int>& labels,
                                const LossSpec<Scalar>& spec) {
  spec.validate(logits.rows(), logits.cols());
  if (static_cast<Index>(labels.size()) != logits.rows()) throw ConfigError("label count mismatch");
  if (spec.flavor == LossFlavor::logit_margin && logits.cols() < 2)
    throw ConfigError("logit-margin loss needs at least two classes");
  Vector<Scalar> losses(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) {
    const auto ref = spec.reference ? RowVector<Scalar>(spec.reference->row(i)) : RowVector<Scalar>(logits.row(i));
    losses(i) = example_loss(logits.row(i), labels[i], spec.flavor, ref);
  }
  return losses;
}

/// Gradient of (1/m) sum_i w_i * loss_i with respect to every parameter. Weights are constants.
template <typename Scalar>
Parameters<Scalar> grad_params(const Mlp<Scalar>& model, const Batch<Scalar>& batch, const LossSpec<Scalar>& spec,
                               const Same<Vector<Scalar>>& example_weights) {
  batch.validate(model.input_dim(), model.class_count());
  if (example_weights.size() != batch.size()) throw ConfigError("weight count does not match batch size");
  if (!example_weights.allFinite() || (example_weights.array() < Scalar(0)).any())
    throw DomainError("example weights must be finite and nonnegative");
  const auto trace = detail::forward_trace(model, batch.inputs);
  const auto& logits = trace.pre_activations.back();
  spec.validate(logits.rows(), logits.cols());
  const Scalar inv_m = Scalar(1) / static_cast<Scalar>(batch.size());
  RowMatrix<Scalar> delta(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const auto ref = spec.reference ? RowVector<Scalar>(spec.reference->row(i)) : RowVector<Scalar>(logits.row(i));
    delta.row(i) = (example_weights(i) * inv_m) *
                   example_loss_gradient(logits.row(i), batch.labels[i], spec.flavor, ref).transpose();
  }
  return detail::backward(model, trace, std::move(delta));
}

/// Logits and input gradient of one example's loss, from a single forward/backward pass.
template <typename Scalar>
struct InputGradient {
  Vector<Scalar> logits;
  Vector<Scalar> gradient;
};

template <typename Scalar>
InputGradient<Scalar> input_gradient(const Mlp<Scalar>& model, const Same<Vector<Scalar>>& input, int label,
                                     LossFlavor flavor, const Same<Vector<Scalar>>& reference = {}) {
  detail::check_input_width(model, input.size());
  const auto& layers = model.layers();
  std::vector<Vector<Scalar>> acts{input};
  std::vector<Vector<Scalar>> pre;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    pre.push_back(layers[l].weight * acts.back() + layers[l].bias);
    if (l + 1 < layers.size()) acts.push_back(pre.back().cwiseMax(Scalar(0)));
  }
  InputGradient<Scalar> out;
  out.logits = pre.back();
  const Vector<Scalar>& ref = flavor == LossFlavor::kl_to_reference ? reference : out.logits;
  if (ref.size() != out.logits.size()) throw ConfigError("reference logits shape does not match logits");
  Vector<Scalar> delta = example_loss_gradient(out.logits, label, flavor, ref);
  for (std::size_t l = layers.size(); l-- > 0;) {
    Vector<Scalar> upstream = layers[l].weight.transpose() * delta;
    if (l == 0) {
      out.gradient = std::move(upstream);
    } else {
      delta = (pre[l - 1].array() > Scalar(0)).select(upstream, Scalar(0));
    }
  }
  return out;
}

/// Exact gradient of one example's loss with respect to its input.
template <typename Scalar>
Vector<Scalar> grad_input(const Mlp<Scalar>& model, const Same<Vector<Scalar>>& input, int label,
                          const LossSpec<Scalar>& spec) {
  if (label < 0 || label >= model.class_count()) throw ConfigError("label out of range");
  spec.validate(1, model.class_count());
  const Vector<Scalar> ref = spec.reference ? Vector<Scalar>(spec.reference->row(0).transpose()) : Vector<Scalar>();
  return input_gradient(model, input, label, spec.flavor, ref).gradient;
}

template <typename Scalar>
Mlp<Scalar> sgd_step(const Mlp<Scalar>& model, const Parameters<Scalar>& gradient, Same<Scalar> lr) {
  if (!(lr > Scalar(0))) throw DomainError("learning rate must be positive");
  if (gradient.size() != model.layers().size()) throw ConfigError("gradient depth does not match model");
  Parameters<Scalar> next = model.layers();
  for (std::size_t l = 0; l < next.size(); ++l) {
    next[l].weight -= lr * gradient[l].weight;
    next[l].bias -= lr * gradient[l].bias;
  }
  return Mlp<Scalar>(std::move(next));
}

/// Elementwise a + scale * b on gradients of the same shape.
template <typename Scalar>
Parameters<Scalar> accumulate(Parameters<Scalar> a, const Parameters<Scalar>& b, Same<Scalar> scale = Scalar(1)) {
  for (std::size_t l = 0; l < a.size(); ++l) {
    a[l].weight += scale * b[l].weight;
    a[l].bias += scale * b[l].bias;
  }
  return a;
}

// Versioned binary model file: "MARATMLP", u32 version, u32 layer count,
// u32 widths (layer count + 1), then per layer row-major f64 weights and biases.
// All integers and floats little-endian.
inline constexpr std::uint32_t kModelFileVersion = 1;

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);
std::string serialize_model(const Model& model);
Model deserialize_model(const std::string& bytes);

}  // namespace marat
