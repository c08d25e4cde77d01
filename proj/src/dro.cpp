#include "marat/dro.hpp"

#include "marat/csv.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace marat {

VectorXd project_to_simplex(const VectorXd& v) {
  const Index n = v.size();
  if (n < 1) throw DomainError("cannot project an empty vector");
  std::vector<double> sorted(v.data(), v.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double prefix = 0.0;
  double tau = 0.0;
  for (Index k = 0; k < n; ++k) {
    prefix += sorted[static_cast<std::size_t>(k)];
    const double candidate = (prefix - 1.0) / static_cast<double>(k + 1);
    if (sorted[static_cast<std::size_t>(k)] - candidate > 0.0) tau = candidate;
  }
  return (v.array() - tau).cwiseMax(0.0).matrix();
}

double chi_square_distance(const VectorXd& w) {
  const double u = 1.0 / static_cast<double>(w.size());
  return 0.5 * (w.array() - u).square().sum();
}

DroSolution solve_dro_weights(const VectorXd& losses, double rho) {
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw DomainError("rho must be finite and nonnegative");
  const Index n = losses.size();
  if (n < 1) throw DomainError("need at least one loss");
  if (!losses.allFinite()) throw DomainError("losses must be finite");

  DroSolution sol;
  sol.rho = rho;
  const double u = 1.0 / static_cast<double>(n);
  const double lo = losses.minCoeff();
  const double hi = losses.maxCoeff();

  if (n == 1) {
    sol.weights = VectorXd::Ones(1);
    sol.objective = losses(0);
    return sol;
  }
  if (rho == 0.0 || hi == lo) {
    sol.weights = VectorXd::Constant(n, u);
    sol.objective = losses.mean();
    return sol;
  }

  const double budget = rho / static_cast<double>(n);

  // Unconstrained optimum: uniform over the argmax set.
  VectorXd vertex = (losses.array() == hi).cast<double>().matrix();
  vertex /= vertex.sum();
  if (chi_square_distance(vertex) <= budget * (1.0 + 1e-12)) {
    sol.weights = vertex;
    sol.objective = hi;
    return sol;
  }

  // The projection is shift invariant, so rescaling to [0,1] leaves the
  // solution path unchanged and makes it independent of the loss scale.
  const VectorXd scaled = ((losses.array() - lo) / (hi - lo)).matrix();
  auto weights_at = [&](double t) { return project_to_simplex((u + t * scaled.array()).matrix()); };

  double t_lo = 0.0;
  double t_hi = 1.0;
  while (chi_square_distance(weights_at(t_hi)) <= budget) {
    t_lo = t_hi;
    t_hi *= 2.0;
  }
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (t_lo + t_hi);
    if (mid <= t_lo || mid >= t_hi) break;
    (chi_square_distance(weights_at(mid)) <= budget ? t_lo : t_hi) = mid;
  }
  sol.weights = weights_at(t_lo);
  sol.objective = sol.weights.dot(losses);
  sol.active_budget = true;
  return sol;
}

std::vector<DroRow> dro_curve(const VectorXd& losses, const std::vector<int>& indicators,
                              const std::vector<double>& rhos) {
  if (static_cast<Index>(indicators.size()) != losses.size())
    throw ConfigError("indicator count does not match loss count");
  if (!std::is_sorted(rhos.begin(), rhos.end())) throw ConfigError("rho grid must be sorted ascending");
  VectorXd ind(losses.size());
  for (Index i = 0; i < losses.size(); ++i) ind(i) = indicators[static_cast<std::size_t>(i)] != 0 ? 1.0 : 0.0;
  std::vector<DroRow> rows;
  for (double rho : rhos) {
    const auto sol = solve_dro_weights(losses, rho);
    const double acc = (rho == 0.0) ? ind.mean() : sol.weights.dot(ind);
    rows.push_back({rho, sol.objective, acc});
  }
  return rows;
}

void write_dro_csv(std::ostream& out, const std::vector<DroRow>& rows) {
  out << "rho,weighted_loss,weighted_accuracy\n";
  for (const auto& r : rows)
    out << format_double(r.rho) << ',' << format_double(r.weighted_loss) << ','
        << format_double(r.weighted_accuracy) << '\n';
}

}  // namespace marat
