#pragma once

// Natural accuracy, uniform-attack robust accuracy, and the two
// importance-sampled accuracies (unweighted-PGD points and weighted-PGD points).

#include "marat/attack.hpp"
#include "marat/data.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

namespace marat {

struct EvalReport {
  double a_nat = 0.0;
  double a_rob = 0.0;
  std::optional<double> alpha_eval;  // absent: only a_nat / a_rob were computed
  double a_sa = 0.0;
  double a_tr = 0.0;

  // Per example, at the unweighted-PGD point (shared by a_rob and a_sa).
  std::vector<double> margin;
  std::vector<double> weight;
  std::vector<double> normalized_weight;
  std::vector<double> adv_loss;
  std::vector<int> ind_rob;
  std::vector<int> ind_sa;
  // Per example, at the weighted-PGD point.
  std::vector<double> tr_margin;
  std::vector<double> tr_weight;
  std::vector<double> tr_normalized_weight;
  std::vector<int> ind_tr;

  AttackConfig attack;  // config echo
};

/// Fraction of clean examples whose smallest-index argmax equals the label.
double eval_natural(const Model& model, const Dataset& testset);

/// Uniform attack with cross-entropy PGD.
double eval_robust(const Model& model, const Dataset& testset, const AttackConfig& attack);

/// Importance-sampled accuracy at the unweighted-PGD points.
double eval_sa(const Model& model, const Dataset& testset, const AttackConfig& attack, double alpha_eval);

/// Importance-sampled accuracy at the weighted-PGD (alpha_eval) points.
double eval_tr(const Model& model, const Dataset& testset, const AttackConfig& attack, double alpha_eval);

/// sum_i s_i * ind_i / sum_i s_i, summing the correct and incorrect groups separately.
double weighted_accuracy(const std::vector<double>& raw_weights, const std::vector<int>& indicators);

/// Full reports, one per alpha in `alphas`, sharing one unweighted attack pass.
/// With an empty list a single report holding only a_nat and a_rob is returned.
std::vector<EvalReport> evaluate(const Model& model, const Dataset& testset, const AttackConfig& attack,
                                 const std::vector<double>& alphas);

enum class SampledMetric { sa, tr };

struct McEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
};

/// Draws indices i.i.d. from the normalized weights and averages the indicators.
McEstimate mc_sampled_accuracy(const EvalReport& report, int draws, std::uint64_t seed,
                               SampledMetric metric = SampledMetric::sa);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<long> counts;   // bins
};

/// Uniform bins over [min, max] of the normalized weights; the last bin is closed.
Histogram weight_histogram(const EvalReport& report, int bins);
Histogram histogram(const std::vector<double>& values, int bins);

/// Metrics plus config echo.
std::string report_json(const EvalReport& report);
/// index,margin,weight,normalized_weight,ind_rob,ind_sa,ind_tr,adv_loss
void write_per_example_csv(std::ostream& out, const EvalReport& report);
/// bin_lo,bin_hi,count
void write_histogram_csv(std::ostream& out, const Histogram& h);

}  // namespace marat
