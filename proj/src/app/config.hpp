#pragma once

// Experiment configuration: an INI file with one section per module. Every
// key has a default; unknown sections or keys are rejected.

#include "marat/attack.hpp"
#include "marat/training.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace marat::app {

struct DataConfig {
  std::string source = "mnist";  // mnist | synthetic | csv
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::filesystem::path train_csv, test_csv;
  int class_count = 10;  // csv only
  Index train_size = 0;  // 0 keeps every example
  Index test_size = 0;
  std::uint64_t subsample_seed = 0;
  int synth_per_class = 200;
  int synth_test_per_class = 100;
  double synth_sigma = 0.05;
  std::uint64_t synth_seed = 0;
  RowMatrixXd synth_centers;
};

struct ModelConfig {
  std::vector<int> hidden;
  std::uint64_t init_seed = 0;
};

struct EvalConfig {
  std::vector<double> alphas;
  std::uint64_t attack_seed = 1;
  int histogram_bins = 20;
  int mc_draws = 0;
  std::uint64_t mc_seed = 0;
};

struct DroConfig {
  AttackFlavor flavor = AttackFlavor::ce;
  std::vector<double> rhos;
};

struct SweepConfig {
  Regime regime = Regime::weighted_at;
  std::vector<double> alpha_train;
  std::vector<double> alpha_eval;
  std::vector<double> epsilon;
};

struct OutputConfig {
  std::filesystem::path dir;  // resolved against the output root
  std::filesystem::path model;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;  // train.attack holds the [attack] section
  EvalConfig eval;
  DroConfig dro;
  SweepConfig sweep;
  OutputConfig output;

  /// Resolved `section.key = value` pairs in declaration order.
  std::vector<std::pair<std::string, std::string>> resolved;

  /// Resolved config as an INI document.
  std::string to_ini() const;
  /// SHA-256 over the data, model, train and attack keys.
  std::string training_hash() const;
};

/// Parses `path` (empty: defaults only), applies `overrides` ("section.key=value"),
/// resolves relative paths against the config file's directory and the output
/// directory against `output_root`. Throws ConfigError.
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                             const std::filesystem::path& output_root);

/// Documented keys with their defaults, as an INI document.
std::string default_config_ini();

std::string sha256_hex(const std::string& bytes);

}  // namespace marat::app
