#include "oracle/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace marat::oracle {
namespace {

double lse(const Vec& z) {
  double top = z[0];
  for (double v : z) top = std::max(top, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - top);
  return top + std::log(s);
}

Vec row(const RowMatrixXd& m, Index i) {
  Vec out(static_cast<std::size_t>(m.cols()));
  for (Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(j)] = m(i, j);
  return out;
}

double entry(const Parameters<double>& p, std::size_t layer, bool bias, Index r, Index c) {
  return bias ? p[layer].bias(r) : p[layer].weight(r, c);
}

}  // namespace

Vec forward(const Model& model, const Vec& x) {
  Vec a = x;
  const auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& W = layers[l].weight;
    Vec z(static_cast<std::size_t>(W.rows()));
    for (Index r = 0; r < W.rows(); ++r) {
      double acc = layers[l].bias(r);
      for (Index c = 0; c < W.cols(); ++c) acc += W(r, c) * a[static_cast<std::size_t>(c)];
      z[static_cast<std::size_t>(r)] = acc;
    }
    if (l + 1 < layers.size())
      for (double& v : z) v = v > 0.0 ? v : 0.0;
    a = std::move(z);
  }
  return a;
}

double loss(const Vec& logits, int label, LossFlavor flavor, const Vec& reference) {
  const auto y = static_cast<std::size_t>(label);
  switch (flavor) {
    case LossFlavor::cross_entropy:
      return lse(logits) - logits[y];
    case LossFlavor::kl_to_reference: {
      const double lq = lse(logits);
      const double lp = lse(reference);
      double kl = 0.0;
      for (std::size_t k = 0; k < logits.size(); ++k) {
        const double log_p = reference[k] - lp;
        kl += std::exp(log_p) * (log_p - (logits[k] - lq));
      }
      return kl;
    }
    case LossFlavor::logit_margin: {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < logits.size(); ++k)
        if (k != y) best = std::max(best, logits[k]);
      return best - logits[y];
    }
  }
  return 0.0;
}

double weighted_objective(const Model& model, const RowMatrixXd& inputs, const std::vector<int>& labels,
                          LossFlavor flavor, const RowMatrixXd* reference, const Vec& weights) {
  double total = 0.0;
  for (Index i = 0; i < inputs.rows(); ++i) {
    const Vec ref = reference ? row(*reference, i) : Vec{};
    total += weights[static_cast<std::size_t>(i)] *
             loss(forward(model, row(inputs, i)), labels[static_cast<std::size_t>(i)], flavor, ref);
  }
  return total / static_cast<double>(inputs.rows());
}

double trades_objective(const Model& model, const RowMatrixXd& clean, const RowMatrixXd& adversarial,
                        const std::vector<int>& labels, double lambda_inv, const Vec& weights, bool kl_only) {
  double total = 0.0;
  for (Index i = 0; i < clean.rows(); ++i) {
    const Vec zc = forward(model, row(clean, i));
    const Vec za = forward(model, row(adversarial, i));
    const double w = weights[static_cast<std::size_t>(i)];
    const double ce = loss(zc, labels[static_cast<std::size_t>(i)], LossFlavor::cross_entropy);
    const double kl = loss(za, 0, LossFlavor::kl_to_reference, zc);
    total += kl_only ? ce + w * lambda_inv * kl : w * (ce + lambda_inv * kl);
  }
  return total / static_cast<double>(clean.rows());
}

Parameters<double> fd_param_gradient(const Model& model, const std::function<double(const Model&)>& objective,
                                     double step) {
  Parameters<double> grad = model.layers();
  for (std::size_t l = 0; l < grad.size(); ++l) {
    for (int bias = 0; bias < 2; ++bias) {
      const Index rows = grad[l].weight.rows();
      const Index cols = bias ? 1 : grad[l].weight.cols();
      for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
          Parameters<double> plus = model.layers();
          Parameters<double> minus = model.layers();
          (bias ? plus[l].bias(r) : plus[l].weight(r, c)) += step;
          (bias ? minus[l].bias(r) : minus[l].weight(r, c)) -= step;
          const double d = (objective(Model(plus)) - objective(Model(minus))) / (2.0 * step);
          (bias ? grad[l].bias(r) : grad[l].weight(r, c)) = d;
        }
      }
    }
  }
  return grad;
}

Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double step) {
  Vec g(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    Vec plus = x, minus = x;
    plus[j] += step;
    minus[j] -= step;
    g[j] = (f(plus) - f(minus)) / (2.0 * step);
  }
  return g;
}

namespace {
void update(GradientCheck& out, double a, double b, double floor) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale <= floor) return;
  out.max_rel_error = std::max(out.max_rel_error, std::abs(a - b) / scale);
  ++out.compared;
}
}  // namespace

GradientCheck compare(const Parameters<double>& analytic, const Parameters<double>& numeric, double floor) {
  GradientCheck out;
  for (std::size_t l = 0; l < analytic.size(); ++l) {
    for (Index r = 0; r < analytic[l].weight.rows(); ++r) {
      for (Index c = 0; c < analytic[l].weight.cols(); ++c)
        update(out, entry(analytic, l, false, r, c), entry(numeric, l, false, r, c), floor);
      update(out, entry(analytic, l, true, r, 0), entry(numeric, l, true, r, 0), floor);
    }
  }
  return out;
}

GradientCheck compare(const Vec& analytic, const Vec& numeric, double floor) {
  GradientCheck out;
  for (std::size_t j = 0; j < analytic.size(); ++j) update(out, analytic[j], numeric[j], floor);
  return out;
}

double dro_enumeration_value(const Vec& losses, double rho) {
  const std::size_t n = losses.size();
  const double u = 1.0 / static_cast<double>(n);
  const double budget = rho / static_cast<double>(n);
  const double tol = 1e-12;
  double best = -std::numeric_limits<double>::infinity();

  auto consider = [&](const Vec& w) {
    double dist = 0.0, sum = 0.0, value = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (w[i] < -tol) return;
      dist += 0.5 * (w[i] - u) * (w[i] - u);
      sum += w[i];
      value += w[i] * losses[i];
    }
    if (std::abs(sum - 1.0) > 1e-9 || dist > budget + 1e-12) return;
    best = std::max(best, value);
  };

  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) support.push_back(i);
    const double k = static_cast<double>(support.size());
    double mean = 0.0;
    for (auto i : support) mean += losses[i];
    mean /= k;
    double spread = 0.0;
    for (auto i : support) spread += (losses[i] - mean) * (losses[i] - mean);
    const double c = 1.0 / k - u;

    // Uniform on the support (the t = 0 point of this face).
    Vec w(n, 0.0);
    for (auto i : support) w[i] = 1.0 / k;
    consider(w);

    // Constraint-active KKT point: w_i = u + c + t (l_i - mean) on the support.
    const double slack = 2.0 * budget - k * c * c - (static_cast<double>(n) - k) * u * u;
    if (spread > 0.0 && slack >= 0.0) {
      const double t = std::sqrt(slack / spread);
      for (auto i : support) w[i] = u + c + t * (losses[i] - mean);
      consider(w);
    }
  }
  return best;
}

double dro_grid_value(const Vec& losses, double rho, int resolution) {
  const double u = 1.0 / 3.0;
  const double budget = rho / 3.0;
  double best = -std::numeric_limits<double>::infinity();
  for (int a = 0; a <= resolution; ++a) {
    for (int b = 0; a + b <= resolution; ++b) {
      const double w0 = static_cast<double>(a) / resolution;
      const double w1 = static_cast<double>(b) / resolution;
      const double w2 = 1.0 - w0 - w1;
      const double dist = 0.5 * ((w0 - u) * (w0 - u) + (w1 - u) * (w1 - u) + (w2 - u) * (w2 - u));
      if (dist <= budget) best = std::max(best, w0 * losses[0] + w1 * losses[1] + w2 * losses[2]);
    }
  }
  return best;
}

bool weighted_below_unweighted(const Vec& weights, const std::vector<int>& indicators) {
  double cov = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    for (std::size_t j = 0; j < weights.size(); ++j)
      cov += (weights[i] - weights[j]) * static_cast<double>(indicators[i] - indicators[j]);
  return cov <= 1e-12;
}

long count_correct(const Model& model, const RowMatrixXd& inputs, const std::vector<int>& labels) {
  long correct = 0;
  for (Index i = 0; i < inputs.rows(); ++i) {
    const Vec z = forward(model, row(inputs, i));
    std::size_t top = 0;
    for (std::size_t k = 1; k < z.size(); ++k)
      if (z[k] > z[top]) top = k;
    correct += static_cast<int>(top) == labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return correct;
}

}  // namespace marat::oracle
