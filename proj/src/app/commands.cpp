#include "app/commands.hpp"

#include "app/selfcheck.hpp"
#include "marat/csv.hpp"
#include "marat/dro.hpp"
#include "marat/evaluation.hpp"
#include "marat/training.hpp"
#include "marat/weighting.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <unistd.h>

namespace marat::app {
namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Invocation {
  std::string command;
  fs::path config_path;
  std::vector<std::string> overrides;
  fs::path model_path;
  fs::path output_root;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::string alpha_tag(double alpha) { return "alpha_" + format_double(alpha); }

fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  if (env && *env) return fs::path(env);
  return fs::current_path();
}

// Timestamps and cache activity live only here, keyed by command.
void record_run(const ExperimentConfig& cfg, const std::string& command, const std::string& started,
                const ordered_json& extra = ordered_json::object()) {
  const fs::path path = cfg.output.dir / "run_metadata.json";
  ordered_json meta = ordered_json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    meta = ordered_json::parse(in, nullptr, false);
    if (meta.is_discarded() || !meta.is_object()) meta = ordered_json::object();
  }
  ordered_json entry;
  entry["started_at"] = started;
  entry["finished_at"] = utc_now();
  entry["training_hash"] = cfg.training_hash();
  for (const auto& [k, v] : extra.items()) entry[k] = v;
  meta[command] = entry;
  write_file_atomic(path, meta.dump(2) + "\n");
}

void archive_config(const ExperimentConfig& cfg) { write_file_atomic(cfg.output.dir / "config.ini", cfg.to_ini()); }

fs::path model_file(const ExperimentConfig& cfg, const Invocation& inv) {
  if (!inv.model_path.empty()) return inv.model_path;
  if (!cfg.output.model.empty()) return cfg.output.model;
  return cfg.output.dir / "model.bin";
}

Model load_checked_model(const fs::path& path, const Dataset& test) {
  const Model model = load_model(path.string());
  if (model.input_dim() != test.dim())
    throw ConfigError("model " + path.string() + " expects " + std::to_string(model.input_dim()) +
                      " inputs but the test set has " + std::to_string(test.dim()));
  if (model.class_count() != test.class_count())
    throw ConfigError("model " + path.string() + " has " + std::to_string(model.class_count()) +
                      " classes but the test set has " + std::to_string(test.class_count()));
  return model;
}

AttackConfig eval_attack(const ExperimentConfig& cfg) { return cfg.train.attack.with_seed(cfg.eval.attack_seed); }

int cmd_train(const ExperimentConfig& cfg, std::ostream& out) {
  const std::string started = utc_now();
  const Datasets data = load_datasets(cfg.data);
  const Model init = initial_model(cfg, data.train);
  const TrainResult result = train(init, data.train, cfg.train);

  fs::create_directories(cfg.output.dir);
  write_file_atomic(cfg.output.dir / "model.bin", serialize_model(result.model));
  std::ostringstream log;
  write_train_log_csv(log, result.log);
  write_file_atomic(cfg.output.dir / "train_log.csv", log.str());
  archive_config(cfg);
  record_run(cfg, "train", started);

  out << "trained " << to_string(cfg.train.regime) << " for " << cfg.train.epochs << " epochs on "
      << data.train.size() << " examples -> " << (cfg.output.dir / "model.bin").string() << "\n";
  if (!result.log.epochs.empty()) {
    const auto& last = result.log.epochs.back();
    out << "final epoch: raw_loss " << format_double(last.raw_loss) << ", train_acc " << format_double(last.train_acc)
        << "\n";
  }
  return kExitOk;
}

ordered_json report_object(const EvalReport& r, const EvalConfig& ec) {
  ordered_json j = ordered_json::parse(report_json(r));
  if (ec.mc_draws > 0 && r.alpha_eval) {
    ordered_json mc;
    mc["draws"] = ec.mc_draws;
    for (auto [name, metric] : {std::pair{"a_sa", SampledMetric::sa}, std::pair{"a_tr", SampledMetric::tr}}) {
      const auto e = mc_sampled_accuracy(r, ec.mc_draws, ec.mc_seed, metric);
      mc[name] = {{"estimate", e.estimate}, {"standard_error", e.standard_error}};
    }
    j["monte_carlo"] = mc;
  }
  return j;
}

int cmd_evaluate(const ExperimentConfig& cfg, const Invocation& inv, std::ostream& out) {
  const std::string started = utc_now();
  const Datasets data = load_datasets(cfg.data);
  const Model model = load_checked_model(model_file(cfg, inv), data.test);
  const auto reports = evaluate(model, data.test, eval_attack(cfg), cfg.eval.alphas);

  fs::create_directories(cfg.output.dir);
  ordered_json all = ordered_json::array();
  for (const auto& r : reports) {
    all.push_back(report_object(r, cfg.eval));
    const std::string tag = r.alpha_eval ? "_" + alpha_tag(*r.alpha_eval) : "";
    std::ostringstream csv;
    write_per_example_csv(csv, r);
    write_file_atomic(cfg.output.dir / ("per_example" + tag + ".csv"), csv.str());
    if (r.alpha_eval) {
      std::ostringstream hist;
      write_histogram_csv(hist, weight_histogram(r, cfg.eval.histogram_bins));
      write_file_atomic(cfg.output.dir / ("histogram" + tag + ".csv"), hist.str());
    }
    out << "a_nat " << format_double(r.a_nat) << "  a_rob " << format_double(r.a_rob);
    if (r.alpha_eval)
      out << "  alpha_eval " << format_double(*r.alpha_eval) << "  a_sa " << format_double(r.a_sa) << "  a_tr "
          << format_double(r.a_tr);
    out << "\n";
  }
  write_file_atomic(cfg.output.dir / "evaluation.json", all.dump(2) + "\n");
  archive_config(cfg);
  record_run(cfg, "evaluate", started);
  return kExitOk;
}

int cmd_dro(const ExperimentConfig& cfg, const Invocation& inv, std::ostream& out) {
  const std::string started = utc_now();
  const Datasets data = load_datasets(cfg.data);
  const Model model = load_checked_model(model_file(cfg, inv), data.test);
  const AttackConfig acfg = eval_attack(cfg).with_flavor(cfg.dro.flavor);
  const Batch<double> adv = batch_attack(model, data.test.all(), acfg);
  const RowMatrixXd logits = forward(model, adv.inputs);

  VectorXd losses = per_example_loss(logits, adv.labels, LossSpec<double>::cross_entropy());
  std::vector<int> correct(static_cast<std::size_t>(adv.size()));
  for (Index i = 0; i < adv.size(); ++i)
    correct[static_cast<std::size_t>(i)] = is_correct(logits.row(i), adv.labels[static_cast<std::size_t>(i)]) ? 1 : 0;
  const auto rows = dro_curve(losses, correct, cfg.dro.rhos);

  fs::create_directories(cfg.output.dir);
  const std::string name = std::string("dro_") + (cfg.dro.flavor == AttackFlavor::margin ? "margin" : "ce") + ".csv";
  std::ostringstream csv;
  write_dro_csv(csv, rows);
  write_file_atomic(cfg.output.dir / name, csv.str());
  archive_config(cfg);
  record_run(cfg, "dro", started);
  out << csv.str();
  return kExitOk;
}

struct SweepCell {
  double alpha_train = 0.0;
  std::string hash;
  std::optional<Model> model;
  std::string error;
  bool cache_hit = false;
};

int cmd_sweep(const ExperimentConfig& cfg, const Invocation& inv, std::ostream& out, std::ostream& err) {
  const std::string started = utc_now();
  const auto& sw = cfg.sweep;
  if (sw.alpha_train.empty() || sw.alpha_eval.empty() || sw.epsilon.empty())
    throw ConfigError("sweep grids must be nonempty");
  const Datasets data = load_datasets(cfg.data);
  const fs::path cache = cfg.output.dir / "cache";
  fs::create_directories(cache);

  std::vector<SweepCell> cells;
  for (double a : sw.alpha_train) {
    SweepCell cell;
    cell.alpha_train = a;
    try {
      auto overrides = inv.overrides;
      overrides.push_back("train.regime=" + to_string(sw.regime));
      overrides.push_back("train.alpha_train=" + format_double(a));
      const ExperimentConfig cell_cfg = load_config(inv.config_path, overrides, inv.output_root);
      cell.hash = cell_cfg.training_hash();
      const fs::path path = cache / (cell.hash + ".bin");
      if (fs::exists(path)) {
        cell.model = load_model(path.string());
        cell.cache_hit = true;
      } else {
        cell.model = train(initial_model(cell_cfg, data.train), data.train, cell_cfg.train).model;
        write_file_atomic(path, serialize_model(*cell.model));
      }
    } catch (const std::exception& e) {
      cell.error = e.what();
      err << "sweep: alpha_train " << format_double(a) << " failed: " << e.what() << "\n";
    }
    cells.push_back(std::move(cell));
  }

  std::ostringstream csv;
  csv << "alpha_train,alpha_eval,epsilon,status,a_nat,a_rob,a_sa,a_tr,model_hash\n";
  bool failed = false;
  for (const auto& cell : cells) {
    for (double eps : sw.epsilon) {
      std::vector<EvalReport> reports;
      std::string error = cell.error;
      if (error.empty()) {
        try {
          AttackConfig acfg = eval_attack(cfg);
          acfg.epsilon = eps;
          reports = evaluate(*cell.model, data.test, acfg, sw.alpha_eval);
        } catch (const std::exception& e) {
          error = e.what();
        }
      }
      for (std::size_t k = 0; k < sw.alpha_eval.size(); ++k) {
        csv << format_double(cell.alpha_train) << ',' << format_double(sw.alpha_eval[k]) << ','
            << format_double(eps) << ',';
        if (!error.empty()) {
          failed = true;
          std::string msg = error;
          std::replace(msg.begin(), msg.end(), ',', ';');
          std::replace(msg.begin(), msg.end(), '\n', ' ');
          csv << "failed: " << msg << ",,,,," << cell.hash << '\n';
          continue;
        }
        const auto& r = reports[k];
        csv << "ok," << format_double(r.a_nat) << ',' << format_double(r.a_rob) << ',' << format_double(r.a_sa) << ','
            << format_double(r.a_tr) << ',' << cell.hash << '\n';
      }
    }
  }
  write_file_atomic(cfg.output.dir / "sweep.csv", csv.str());
  archive_config(cfg);
  ordered_json extra;
  extra["cache"] = ordered_json::array();
  for (const auto& cell : cells)
    extra["cache"].push_back({{"alpha_train", cell.alpha_train},
                              {"hash", cell.hash},
                              {"status", cell.error.empty() ? (cell.cache_hit ? "hit" : "trained") : "failed"}});
  record_run(cfg, "sweep", started, extra);
  out << csv.str();
  return failed ? kExitRuntime : kExitOk;
}

int dispatch(const Invocation& inv, std::ostream& out, std::ostream& err) {
  if (inv.command == "selfcheck") return run_selfcheck(out) ? kExitOk : kExitRuntime;
  if (inv.command == "defaults") {
    out << default_config_ini();
    return kExitOk;
  }
  const ExperimentConfig cfg = load_config(inv.config_path, inv.overrides, inv.output_root);
  if (inv.command == "train") return cmd_train(cfg, out);
  if (inv.command == "evaluate") return cmd_evaluate(cfg, inv, out);
  if (inv.command == "dro") return cmd_dro(cfg, inv, out);
  if (inv.command == "sweep") return cmd_sweep(cfg, inv, out, err);
  throw ConfigError("unknown command " + inv.command);
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Datasets load_datasets(const DataConfig& cfg) {
  auto trimmed = [&](Dataset d, Index n, std::uint64_t stream) {
    if (n == 0 || n == d.size()) return d;
    if (n > d.size())
      throw ConfigError("requested " + std::to_string(n) + " examples but '" + d.name() + "' has " +
                        std::to_string(d.size()));
    return subsample(d, n, derive_seed(cfg.subsample_seed, stream));
  };
  if (cfg.source == "mnist") {
    for (const auto& p : {cfg.train_images, cfg.train_labels, cfg.test_images, cfg.test_labels})
      if (!fs::exists(p)) throw IngestionError("dataset file not found: " + p.string());
    return {trimmed(load_mnist_idx(cfg.train_images.string(), cfg.train_labels.string()), cfg.train_size, 0),
            trimmed(load_mnist_idx(cfg.test_images.string(), cfg.test_labels.string()), cfg.test_size, 1)};
  }
  if (cfg.source == "csv") {
    for (const auto& p : {cfg.train_csv, cfg.test_csv})
      if (!fs::exists(p)) throw IngestionError("dataset file not found: " + p.string());
    return {trimmed(load_dataset_csv(cfg.train_csv.string(), cfg.class_count), cfg.train_size, 0),
            trimmed(load_dataset_csv(cfg.test_csv.string(), cfg.class_count), cfg.test_size, 1)};
  }
  return {synth_gaussians(cfg.synth_per_class, cfg.synth_centers, cfg.synth_sigma, derive_seed(cfg.synth_seed, 0)),
          synth_gaussians(cfg.synth_test_per_class, cfg.synth_centers, cfg.synth_sigma,
                          derive_seed(cfg.synth_seed, 1))};
}

Model initial_model(const ExperimentConfig& cfg, const Dataset& data) {
  std::vector<int> widths{static_cast<int>(data.dim())};
  widths.insert(widths.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
  widths.push_back(data.class_count());
  return Model::glorot(widths, cfg.model.init_seed);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Margin-weighted adversarial training and non-uniform attack evaluation"};
  app.require_subcommand(1);
  Invocation inv;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", inv.config_path, "INI config file (defaults apply when omitted)");
    sub->add_option("-s,--set", inv.overrides, "override, section.key=value")->take_all();
  };
  add_config(app.add_subcommand("train", "train a model"));
  for (const char* name : {"evaluate", "dro"}) {
    auto* sub = app.add_subcommand(name, name == std::string("dro") ? "chi-square DRO curve of a model"
                                                                    : "accuracy metrics of a model");
    add_config(sub);
    sub->add_option("-m,--model", inv.model_path, "model file (default: output.model or <dir>/model.bin)");
  }
  add_config(app.add_subcommand("sweep", "alpha_train x alpha_eval x epsilon grid"));
  app.add_subcommand("selfcheck", "run the reference-implementation checks");
  app.add_subcommand("defaults", "print every config key with its default");

  std::vector<std::string> argv_storage{"marat"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  inv.command = app.get_subcommands().front()->get_name();

  try {
    inv.output_root = output_root();
    return dispatch(inv, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace marat::app
