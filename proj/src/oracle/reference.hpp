#pragma once

// Reference computations used to check the library. Nothing here calls the
// library's forward, loss, gradient or solver code: models are read through
// their parameter matrices only and everything is straight loops over
// std::vector.

#include "marat/mlp.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace marat::oracle {

using Vec = std::vector<double>;

Vec forward(const Model& model, const Vec& x);

/// Loss of a logit vector; `reference` only read by the kl flavor.
double loss(const Vec& logits, int label, LossFlavor flavor, const Vec& reference = {});

/// (1/m) sum_i w_i loss_i over rows of `inputs`.
double weighted_objective(const Model& model, const RowMatrixXd& inputs, const std::vector<int>& labels,
                          LossFlavor flavor, const RowMatrixXd* reference, const Vec& weights);

/// (1/m) sum_i w_i (CE(x_i) + lambda_inv KL(p(x_i) || p(x'_i))), or CE + w KL for kl_only.
double trades_objective(const Model& model, const RowMatrixXd& clean, const RowMatrixXd& adversarial,
                        const std::vector<int>& labels, double lambda_inv, const Vec& weights, bool kl_only);

/// Central differences of `objective` over every parameter of `model`.
Parameters<double> fd_param_gradient(const Model& model, const std::function<double(const Model&)>& objective,
                                     double step);

/// Central differences of `f` at x.
Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double step);

struct GradientCheck {
  double max_rel_error = 0.0;
  long compared = 0;
};

/// Relative error |a-b| / max(|a|,|b|) over components where max(|a|,|b|) > floor.
GradientCheck compare(const Parameters<double>& analytic, const Parameters<double>& numeric, double floor = 1e-8);
GradientCheck compare(const Vec& analytic, const Vec& numeric, double floor = 1e-8);

/// Optimal value of max w.l s.t. simplex and 0.5||w - 1/N||^2 <= rho/N, by enumerating
/// every support set and solving its KKT system in closed form. N <= 16.
double dro_enumeration_value(const Vec& losses, double rho);

/// Best objective over a uniform grid of the 2-simplex (N = 3) restricted to the chi-square ball.
double dro_grid_value(const Vec& losses, double rho, int resolution);

/// True iff sum_i s_i 1_i / sum_i s_i <= mean(1_i), checked through the sign of the covariance
/// sum_{i,j} (s_i - s_j)(1_i - 1_j).
bool weighted_below_unweighted(const Vec& weights, const std::vector<int>& indicators);

/// Count of rows whose first maximal logit matches the label.
long count_correct(const Model& model, const RowMatrixXd& inputs, const std::vector<int>& labels);

}  // namespace marat::oracle
