#pragma once

// Worst-case reweighting of per-example losses inside a chi-square ball
// around the uniform distribution:
//
//   maximize  sum_i w_i l_i
//   s.t.      w on the probability simplex,  0.5 * ||w - 1/N||^2 <= rho / N.

#include "marat/common.hpp"

#include <ostream>
#include <vector>

namespace marat {

struct DroSolution {
  VectorXd weights;
  double objective = 0.0;
  double rho = 0.0;
  bool active_budget = false;  // chi-square constraint tight at the optimum
};

/// Euclidean projection onto the probability simplex (sort-based water-filling).
VectorXd project_to_simplex(const VectorXd& v);

/// 0.5 * ||w - 1/N||^2.
double chi_square_distance(const VectorXd& w);

/// Exact maximizer. The KKT solution is w(t) = P_simplex(1/N + t * l); t is
/// found by bisection on the constraint. Ties in l get equal weight.
DroSolution solve_dro_weights(const VectorXd& losses, double rho);

struct DroRow {
  double rho = 0.0;
  double weighted_loss = 0.0;
  double weighted_accuracy = 0.0;
};

/// One row per rho; accuracy is evaluated under the loss-maximizing weights.
std::vector<DroRow> dro_curve(const VectorXd& losses, const std::vector<int>& indicators,
                              const std::vector<double>& rhos);

/// CSV: rho,weighted_loss,weighted_accuracy
void write_dro_csv(std::ostream& out, const std::vector<DroRow>& rows);

}  // namespace marat
