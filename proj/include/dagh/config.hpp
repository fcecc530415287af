#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dagh/datasets.hpp"
#include "dagh/trainer.hpp"

namespace dagh {

struct DatasetConfig {
  /// synthetic | cifar10
  std::string kind = "synthetic";
  /// directory with the CIFAR-10 binary batches
  std::filesystem::path path;
  int n_classes = 4;
  int train_per_class = 50;
  int query_per_class = 10;
  /// for cifar10, 0 keeps every remaining image in the gallery
  int gallery_per_class = 50;
  ImageShape shape{32, 32, 3};
  double noise = 0.2;
  std::uint64_t seed = 0;
};

struct EvalConfig {
  int cutoff = 5000;
  std::vector<int> ns{1, 5, 10, 20, 50, 100};
};

/// INI sections: [dataset] [model] [train] [eval] [output].
struct ExperimentConfig {
  DatasetConfig dataset;
  TrainConfig train;
  EvalConfig eval;
  std::filesystem::path output_dir = "runs/default";

  void validate() const;
};

/// Environment variable that replaces [output] dir when set.
inline constexpr const char* kOutputDirEnv = "DAGH_OUTPUT_DIR";

ExperimentConfig parse_config(const std::string& text, const std::string& source = "<string>");
/// Reads, validates and applies the DAGH_OUTPUT_DIR override.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Sets one "section.key" to a value written as in the INI file.
void apply_override(ExperimentConfig& config, const std::string& dotted_key,
                    const std::string& value);
/// Value of one "section.key" formatted as in the INI file.
std::string config_value(const ExperimentConfig& config, const std::string& dotted_key);
/// Canonical INI text; parse_config(to_ini(c)) == c.
std::string to_ini(const ExperimentConfig& config);
nlohmann::json to_json(const ExperimentConfig& config);

/// Synthetic split seeds are derived as seed * 3 + {0, 1, 2}.
struct ExperimentData {
  Dataset train;
  Dataset query;
  Dataset gallery;
};
ExperimentData load_experiment_data(const DatasetConfig& config);

}  // namespace dagh
