#pragma once

#include "app/config.hpp"
#include "marat/data.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace marat::app {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

/// Name of the environment variable that overrides the output root.
inline constexpr const char* kOutputRootEnv = "MARAT_OUTPUT_ROOT";

/// Parses `args` (without the program name) and runs the selected command.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct Datasets {
  Dataset train;
  Dataset test;
};

/// Loads or generates the configured train/test pair.
Datasets load_datasets(const DataConfig& cfg);

/// Glorot-initialized model sized for `data`.
Model initial_model(const ExperimentConfig& cfg, const Dataset& data);

/// Writes through a temporary file in the same directory and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace marat::app
