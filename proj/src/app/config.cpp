#include "app/config.hpp"

#include "marat/csv.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

namespace marat::app {
namespace {

struct Field {
  const char* section;
  const char* key;
  const char* value;
  const char* doc;
};

// Declaration order is the order of the archived config.
constexpr Field kFields[] = {
    {"data", "source", "mnist", "mnist | synthetic | csv"},
    {"data", "train_images", "data/mnist5k/train-images-idx3-ubyte", "IDX image file (mnist)"},
    {"data", "train_labels", "data/mnist5k/train-labels-idx1-ubyte", "IDX label file (mnist)"},
    {"data", "test_images", "data/mnist5k/t10k-images-idx3-ubyte", "IDX image file (mnist)"},
    {"data", "test_labels", "data/mnist5k/t10k-labels-idx1-ubyte", "IDX label file (mnist)"},
    {"data", "train_csv", "", "label,x0,... file (csv)"},
    {"data", "test_csv", "", "label,x0,... file (csv)"},
    {"data", "class_count", "10", "class count (csv)"},
    {"data", "train_size", "2000", "seeded subsample size, 0 keeps all"},
    {"data", "test_size", "1000", "seeded subsample size, 0 keeps all"},
    {"data", "subsample_seed", "0", ""},
    {"data", "synth_per_class", "200", "training points per class (synthetic)"},
    {"data", "synth_test_per_class", "100", "test points per class (synthetic)"},
    {"data", "synth_sigma", "0.05", "blob standard deviation (synthetic)"},
    {"data", "synth_seed", "0", ""},
    {"data", "synth_centers", "0.25 0.25; 0.75 0.75", "one row per class, rows separated by ';'"},
    {"model", "hidden", "256,128", "hidden layer widths"},
    {"model", "init_seed", "0", ""},
    {"train", "regime", "at", "natural | at | combined | trades | weighted-at | weighted-trades"},
    {"train", "epochs", "15", ""},
    {"train", "batch_size", "128", ""},
    {"train", "lr", "0.1", "SGD step size"},
    {"train", "alpha_train", "", "kernel strength, weighted regimes"},
    {"train", "lambda_inv", "", "KL penalty strength, trades regimes"},
    {"train", "combine_lambda", "", "adversarial term weight, combined regime"},
    {"train", "trades_weighting", "whole_loss", "whole_loss | kl_only"},
    {"train", "seed", "0", "minibatch order"},
    {"attack", "epsilon", "0.3", "l-infinity budget"},
    {"attack", "step_size", "0.01", ""},
    {"attack", "steps", "10", ""},
    {"attack", "init_noise_scale", "0.001", ""},
    {"attack", "seed", "0", "training-time attack noise"},
    {"eval", "alphas", "0.5,1,1.5,2", "adversary kernel strengths; empty for natural/robust only"},
    {"eval", "attack_seed", "1", "evaluation-time attack noise"},
    {"eval", "histogram_bins", "20", ""},
    {"eval", "mc_draws", "0", "Monte-Carlo draws per report, 0 to skip"},
    {"eval", "mc_seed", "0", ""},
    {"dro", "flavor", "ce", "ce | margin"},
    {"dro", "rhos", "0.01,0.02,0.04,0.08,0.16,0.32,0.64,1", "ascending budgets"},
    {"sweep", "regime", "weighted-at", "weighted-at | weighted-trades"},
    {"sweep", "alpha_train", "0,0.5", ""},
    {"sweep", "alpha_eval", "0,0.5,1,2", ""},
    {"sweep", "epsilon", "0.3", "evaluation budgets"},
    {"output", "dir", "runs/default", "relative to the output root"},
    {"output", "model", "", "model file for evaluate/dro; default <dir>/model.bin"},
};

const char* const kPathKeys[] = {"data.train_images", "data.train_labels", "data.test_images",
                                 "data.test_labels",  "data.train_csv",    "data.test_csv"};

std::string trim(std::string s) {
  auto space = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), space));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), space).base(), s.end());
  return s;
}

class Values {
 public:
  explicit Values(const std::map<std::string, std::string>& v) : values_(v) {}

  const std::string& str(const std::string& name) const { return values_.at(name); }

  double real(const std::string& name) const { return parse_real(name, str(name)); }

  std::optional<double> optional_real(const std::string& name) const {
    if (str(name).empty()) return std::nullopt;
    return real(name);
  }

  long long integer(const std::string& name) const {
    const std::string& s = str(name);
    long long v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || s.empty())
      throw ConfigError(name + ": '" + s + "' is not an integer");
    return v;
  }

  std::uint64_t seed(const std::string& name) const {
    const std::string& s = str(name);
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || s.empty())
      throw ConfigError(name + ": '" + s + "' is not a nonnegative integer");
    return v;
  }

  std::vector<double> reals(const std::string& name) const {
    std::vector<double> out;
    if (trim(str(name)).empty()) return out;
    for (const auto& cell : split(str(name), ',')) out.push_back(parse_real(name, trim(cell)));
    return out;
  }

  std::vector<int> integers(const std::string& name) const {
    std::vector<int> out;
    for (double v : reals(name)) {
      if (v != std::floor(v) || v < 1) throw ConfigError(name + ": widths must be positive integers");
      out.push_back(static_cast<int>(v));
    }
    return out;
  }

 private:
  static double parse_real(const std::string& name, const std::string& s) {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || s.empty() || !std::isfinite(v))
      throw ConfigError(name + ": '" + s + "' is not a finite number");
    return v;
  }

  const std::map<std::string, std::string>& values_;
};

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : kFields)
    if (section == f.section && key == f.key) return &f;
  return nullptr;
}

void assign(std::map<std::string, std::string>& values, const std::string& section, const std::string& key,
            const std::string& value, const std::string& origin) {
  if (!find_field(section, key)) {
    bool known_section = false;
    for (const auto& f : kFields) known_section = known_section || section == f.section;
    if (!known_section) throw ConfigError(origin + ": unknown section [" + section + "]");
    throw ConfigError(origin + ": unknown key '" + key + "' in [" + section + "]");
  }
  values[section + "." + key] = trim(value);
}

RowMatrixXd parse_centers(const std::string& name, const std::string& text) {
  std::vector<std::vector<double>> rows;
  for (const auto& row_text : split(text, ';')) {
    std::istringstream in(row_text);
    std::vector<double> row;
    std::string cell;
    while (in >> cell) {
      double v = 0.0;
      const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || end != cell.data() + cell.size()) throw ConfigError(name + ": bad number '" + cell + "'");
      row.push_back(v);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(name + ": no centers");
  RowMatrixXd c(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw ConfigError(name + ": rows differ in length");
    for (std::size_t j = 0; j < rows[i].size(); ++j) c(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return c;
}

AttackFlavor parse_dro_flavor(const std::string& s) {
  if (s == "ce") return AttackFlavor::ce;
  if (s == "margin") return AttackFlavor::margin;
  throw ConfigError("dro.flavor: expected ce or margin, got '" + s + "'");
}

void check_nonnegative(const std::vector<double>& v, const char* name) {
  for (double x : v)
    if (x < 0.0) throw ConfigError(std::string(name) + ": values must be >= 0");
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string default_config_ini() {
  std::ostringstream out;
  std::string section;
  for (const auto& f : kFields) {
    if (section != f.section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    if (*f.doc) out << "; " << f.doc << '\n';
    out << f.key << " = " << f.value << '\n';
  }
  return out.str();
}

std::string ExperimentConfig::to_ini() const {
  std::ostringstream out;
  std::string section;
  for (const auto& [name, value] : resolved) {
    const auto dot = name.find('.');
    const std::string s = name.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << '\n';
      section = s;
      out << '[' << s << "]\n";
    }
    out << name.substr(dot + 1) << " = " << value << '\n';
  }
  return out.str();
}

std::string ExperimentConfig::training_hash() const {
  std::string canonical;
  for (const auto& [name, value] : resolved)
    if (name.rfind("data.", 0) == 0 || name.rfind("model.", 0) == 0 || name.rfind("train.", 0) == 0 ||
        name.rfind("attack.", 0) == 0)
      canonical += name + "=" + value + "\n";
  return sha256_hex(canonical);
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                             const std::filesystem::path& output_root) {
  namespace fs = std::filesystem;
  std::map<std::string, std::string> values;
  for (const auto& f : kFields) values[std::string(f.section) + "." + f.key] = f.value;

  fs::path base = fs::current_path();
  if (!path.empty()) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(std::string("cannot parse config: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty()) throw ConfigError(path.string() + ": key '" + section + "' is outside any section");
      for (const auto& [key, leaf] : body) assign(values, section, key, leaf.data(), path.string());
    }
    base = fs::absolute(path).parent_path();
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ConfigError("override '" + o + "' is not of the form section.key=value");
    assign(values, trim(o.substr(0, dot)), trim(o.substr(dot + 1, eq - dot - 1)), o.substr(eq + 1), "override");
  }
  for (const char* key : kPathKeys) {
    auto& v = values[key];
    if (!v.empty()) v = (base / v).lexically_normal().string();
  }
  {
    auto& dir = values["output.dir"];
    if (dir.empty()) throw ConfigError("output.dir must not be empty");
    dir = (output_root / dir).lexically_normal().string();
    auto& model = values["output.model"];
    if (!model.empty()) model = (base / model).lexically_normal().string();
  }

  const Values v(values);
  ExperimentConfig cfg;
  for (const auto& f : kFields) {
    const std::string name = std::string(f.section) + "." + f.key;
    cfg.resolved.emplace_back(name, values[name]);
  }

  auto& d = cfg.data;
  d.source = v.str("data.source");
  if (d.source != "mnist" && d.source != "synthetic" && d.source != "csv")
    throw ConfigError("data.source: expected mnist, synthetic or csv, got '" + d.source + "'");
  d.train_images = v.str("data.train_images");
  d.train_labels = v.str("data.train_labels");
  d.test_images = v.str("data.test_images");
  d.test_labels = v.str("data.test_labels");
  d.train_csv = v.str("data.train_csv");
  d.test_csv = v.str("data.test_csv");
  d.class_count = static_cast<int>(v.integer("data.class_count"));
  d.train_size = v.integer("data.train_size");
  d.test_size = v.integer("data.test_size");
  if (d.train_size < 0 || d.test_size < 0) throw ConfigError("data.train_size/test_size must be >= 0");
  d.subsample_seed = v.seed("data.subsample_seed");
  d.synth_per_class = static_cast<int>(v.integer("data.synth_per_class"));
  d.synth_test_per_class = static_cast<int>(v.integer("data.synth_test_per_class"));
  d.synth_sigma = v.real("data.synth_sigma");
  d.synth_seed = v.seed("data.synth_seed");
  d.synth_centers = parse_centers("data.synth_centers", v.str("data.synth_centers"));
  if (d.source == "csv" && (d.train_csv.empty() || d.test_csv.empty()))
    throw ConfigError("data.source = csv needs data.train_csv and data.test_csv");
  if (d.source == "synthetic" && (d.synth_per_class < 1 || d.synth_test_per_class < 1 || !(d.synth_sigma > 0.0)))
    throw ConfigError("synthetic data needs positive sizes and sigma");

  cfg.model.hidden = v.integers("model.hidden");
  cfg.model.init_seed = v.seed("model.init_seed");

  auto& t = cfg.train;
  t.regime = parse_regime(v.str("train.regime"));
  t.epochs = static_cast<int>(v.integer("train.epochs"));
  t.batch_size = static_cast<int>(v.integer("train.batch_size"));
  t.lr = v.real("train.lr");
  t.alpha_train = v.optional_real("train.alpha_train");
  t.lambda_inv = v.optional_real("train.lambda_inv");
  t.combine_lambda = v.optional_real("train.combine_lambda");
  const std::string tw = v.str("train.trades_weighting");
  if (tw == "whole_loss")
    t.trades_weighting = TradesWeighting::whole_loss;
  else if (tw == "kl_only")
    t.trades_weighting = TradesWeighting::kl_only;
  else
    throw ConfigError("train.trades_weighting: expected whole_loss or kl_only, got '" + tw + "'");
  t.seed = v.seed("train.seed");
  t.attack.epsilon = v.real("attack.epsilon");
  t.attack.step_size = v.real("attack.step_size");
  t.attack.steps = static_cast<int>(v.integer("attack.steps"));
  t.attack.init_noise_scale = v.real("attack.init_noise_scale");
  t.attack.seed = v.seed("attack.seed");
  t.attack.validate();
  t.validate();

  cfg.eval.alphas = v.reals("eval.alphas");
  check_nonnegative(cfg.eval.alphas, "eval.alphas");
  cfg.eval.attack_seed = v.seed("eval.attack_seed");
  cfg.eval.histogram_bins = static_cast<int>(v.integer("eval.histogram_bins"));
  if (cfg.eval.histogram_bins < 1) throw ConfigError("eval.histogram_bins must be >= 1");
  cfg.eval.mc_draws = static_cast<int>(v.integer("eval.mc_draws"));
  if (cfg.eval.mc_draws < 0) throw ConfigError("eval.mc_draws must be >= 0");
  cfg.eval.mc_seed = v.seed("eval.mc_seed");

  cfg.dro.flavor = parse_dro_flavor(v.str("dro.flavor"));
  cfg.dro.rhos = v.reals("dro.rhos");
  check_nonnegative(cfg.dro.rhos, "dro.rhos");
  if (cfg.dro.rhos.empty()) throw ConfigError("dro.rhos must not be empty");
  if (!std::is_sorted(cfg.dro.rhos.begin(), cfg.dro.rhos.end())) throw ConfigError("dro.rhos must be ascending");

  cfg.sweep.regime = parse_regime(v.str("sweep.regime"));
  if (cfg.sweep.regime != Regime::weighted_at && cfg.sweep.regime != Regime::weighted_trades)
    throw ConfigError("sweep.regime must be weighted-at or weighted-trades");
  cfg.sweep.alpha_train = v.reals("sweep.alpha_train");
  cfg.sweep.alpha_eval = v.reals("sweep.alpha_eval");
  cfg.sweep.epsilon = v.reals("sweep.epsilon");
  check_nonnegative(cfg.sweep.alpha_train, "sweep.alpha_train");
  check_nonnegative(cfg.sweep.alpha_eval, "sweep.alpha_eval");
  check_nonnegative(cfg.sweep.epsilon, "sweep.epsilon");

  cfg.output.dir = v.str("output.dir");
  cfg.output.model = v.str("output.model");
  return cfg;
}

}  // namespace marat::app
