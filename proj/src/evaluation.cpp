#include "marat/evaluation.hpp"

#include "marat/csv.hpp"
#include "marat/weighting.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <random>

namespace marat {
namespace {

struct PointStats {
  double margin = 0.0;
  double loss = 0.0;
  int correct = 0;
};

PointStats stats_at(const Model& model, const VectorXd& x, int label) {
  const VectorXd logits = forward(model, x);
  const VectorXd probs = softmax(logits);
  return {margin(probs, label), example_loss(logits, label, LossFlavor::cross_entropy, logits),
          is_correct(probs, label) ? 1 : 0};
}

void require_nonempty(const Dataset& testset) {
  if (testset.size() < 1) throw DomainError("empty test set");
}

std::vector<PointStats> attacked_stats(const Model& model, const Dataset& testset, const AttackConfig& cfg) {
  cfg.validate();
  if (testset.dim() != model.input_dim()) throw ConfigError("test set width does not match model input");
  if (testset.class_count() > model.class_count()) throw ConfigError("test set has more classes than the model");
  std::vector<PointStats> out(static_cast<std::size_t>(testset.size()));
  const Index n = testset.size();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) {
    const AttackConfig local = cfg.with_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    const VectorXd adv = attack(model, testset.example(i), testset.label(i), local);
    out[static_cast<std::size_t>(i)] = stats_at(model, adv, testset.label(i));
  }
  return out;
}

double fraction_correct(const std::vector<PointStats>& stats) {
  long correct = 0;
  for (const auto& s : stats) correct += s.correct;
  return static_cast<double>(correct) / static_cast<double>(stats.size());
}

}  // namespace

double weighted_accuracy(const std::vector<double>& raw_weights, const std::vector<int>& indicators) {
  if (raw_weights.size() != indicators.size() || raw_weights.empty())
    throw ConfigError("weights and indicators must be nonempty and of equal length");
  double correct = 0.0;
  double wrong = 0.0;
  for (std::size_t i = 0; i < raw_weights.size(); ++i) (indicators[i] != 0 ? correct : wrong) += raw_weights[i];
  return correct / (correct + wrong);
}

double eval_natural(const Model& model, const Dataset& testset) {
  require_nonempty(testset);
  if (testset.dim() != model.input_dim()) throw ConfigError("test set width does not match model input");
  long correct = 0;
  for (Index i = 0; i < testset.size(); ++i)
    correct += is_correct(softmax(forward(model, testset.example(i))), testset.label(i)) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(testset.size());
}

double eval_robust(const Model& model, const Dataset& testset, const AttackConfig& attack) {
  require_nonempty(testset);
  return fraction_correct(attacked_stats(model, testset, attack.with_flavor(AttackFlavor::ce)));
}

double eval_sa(const Model& model, const Dataset& testset, const AttackConfig& attack, double alpha_eval) {
  return evaluate(model, testset, attack, {alpha_eval}).front().a_sa;
}

double eval_tr(const Model& model, const Dataset& testset, const AttackConfig& attack, double alpha_eval) {
  return evaluate(model, testset, attack, {alpha_eval}).front().a_tr;
}

std::vector<EvalReport> evaluate(const Model& model, const Dataset& testset, const AttackConfig& attack,
                                 const std::vector<double>& alphas) {
  require_nonempty(testset);
  for (double a : alphas) WeightConfig{a}.validate();
  const AttackConfig base = attack.with_flavor(AttackFlavor::ce);

  EvalReport common;
  common.attack = base;
  common.a_nat = eval_natural(model, testset);
  const auto rob = attacked_stats(model, testset, base);
  common.a_rob = fraction_correct(rob);
  for (const auto& s : rob) {
    common.margin.push_back(s.margin);
    common.adv_loss.push_back(s.loss);
    common.ind_rob.push_back(s.correct);
  }
  common.ind_sa = common.ind_rob;
  if (alphas.empty()) return {common};

  std::vector<EvalReport> reports;
  for (double alpha : alphas) {
    EvalReport r = common;
    r.alpha_eval = alpha;
    const WeightConfig wc{alpha};

    VectorXd raw(testset.size());
    for (Index i = 0; i < raw.size(); ++i) raw(i) = importance_weight(r.margin[static_cast<std::size_t>(i)], wc);
    const auto w = normalize(raw);
    r.weight.assign(w.raw.data(), w.raw.data() + w.raw.size());
    r.normalized_weight.assign(w.normalized.data(), w.normalized.data() + w.normalized.size());
    r.a_sa = weighted_accuracy(r.weight, r.ind_sa);

    // Same per-example seeds as the unweighted pass, so alpha = 0 reproduces it exactly.
    const auto tr = attacked_stats(model, testset, base.with_flavor(AttackFlavor::weighted_ce, alpha));
    VectorXd tr_raw(testset.size());
    for (std::size_t i = 0; i < tr.size(); ++i) {
      r.tr_margin.push_back(tr[i].margin);
      r.ind_tr.push_back(tr[i].correct);
      tr_raw(static_cast<Index>(i)) = importance_weight(tr[i].margin, wc);
    }
    const auto tw = normalize(tr_raw);
    r.tr_weight.assign(tw.raw.data(), tw.raw.data() + tw.raw.size());
    r.tr_normalized_weight.assign(tw.normalized.data(), tw.normalized.data() + tw.normalized.size());
    r.a_tr = weighted_accuracy(r.tr_weight, r.ind_tr);
    reports.push_back(std::move(r));
  }
  return reports;
}

McEstimate mc_sampled_accuracy(const EvalReport& report, int draws, std::uint64_t seed, SampledMetric metric) {
  if (draws < 1) throw DomainError("need at least one draw");
  const bool use_tr = metric == SampledMetric::tr;
  const auto& probs = use_tr ? report.tr_normalized_weight : report.normalized_weight;
  const auto& ind = use_tr ? report.ind_tr : report.ind_sa;
  if (probs.empty() || probs.size() != ind.size()) throw ConfigError("report has no sampling weights");
  std::discrete_distribution<std::size_t> pick(probs.begin(), probs.end());
  Rng rng(seed);
  long hits = 0;
  for (int k = 0; k < draws; ++k) hits += ind[pick(rng)] != 0 ? 1 : 0;
  McEstimate out;
  out.estimate = static_cast<double>(hits) / draws;
  if (draws > 1) {
    const double var = static_cast<double>(hits) * (1.0 - out.estimate) / (draws - 1);
    out.standard_error = std::sqrt(var / draws);
  }
  return out;
}

Histogram histogram(const std::vector<double>& values, int bins) {
  if (bins < 1) throw DomainError("histogram needs at least one bin");
  if (values.empty()) throw DomainError("histogram of no values");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn;
  const double hi = *mx;
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (int b = 0; b <= bins; ++b) h.edges.push_back(b == bins ? hi : lo + (hi - lo) * b / bins);
  for (double v : values) {
    int b = 0;
    if (hi > lo) b = std::min(bins - 1, static_cast<int>(std::floor((v - lo) / (hi - lo) * bins)));
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

Histogram weight_histogram(const EvalReport& report, int bins) { return histogram(report.normalized_weight, bins); }

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["a_nat"] = report.a_nat;
  j["a_rob"] = report.a_rob;
  if (report.alpha_eval) {
    j["alpha_eval"] = *report.alpha_eval;
    j["a_sa"] = report.a_sa;
    j["a_tr"] = report.a_tr;
  }
  j["n"] = report.ind_rob.size();
  nlohmann::ordered_json cfg;
  cfg["epsilon"] = report.attack.epsilon;
  cfg["step_size"] = report.attack.step_size;
  cfg["steps"] = report.attack.steps;
  cfg["init_noise_scale"] = report.attack.init_noise_scale;
  cfg["attack_seed"] = report.attack.seed;
  j["config"] = cfg;
  return j.dump(2) + "\n";
}

void write_per_example_csv(std::ostream& out, const EvalReport& report) {
  out << "index,margin,weight,normalized_weight,ind_rob,ind_sa,ind_tr,adv_loss\n";
  const bool weighted = report.alpha_eval.has_value();
  for (std::size_t i = 0; i < report.margin.size(); ++i) {
    out << i << ',' << format_double(report.margin[i]) << ',' << (weighted ? format_double(report.weight[i]) : "")
        << ',' << (weighted ? format_double(report.normalized_weight[i]) : "") << ',' << report.ind_rob[i] << ','
        << report.ind_sa[i] << ',' << (weighted ? std::to_string(report.ind_tr[i]) : "") << ','
        << format_double(report.adv_loss[i]) << '\n';
  }
}

void write_histogram_csv(std::ostream& out, const Histogram& h) {
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b)
    out << format_double(h.edges[b]) << ',' << format_double(h.edges[b + 1]) << ',' << h.counts[b] << '\n';
}

}  // namespace marat
