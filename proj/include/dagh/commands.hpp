#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dagh/checkpoint.hpp"
#include "dagh/config.hpp"
#include "dagh/metrics.hpp"
#include "dagh/retrieval.hpp"
#include "dagh/trainer.hpp"

namespace dagh::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kDataError = 3, kDiverged = 4 };

/// Runs fn and maps exceptions to exit codes, printing the message to err.
int guarded(std::ostream& err, const std::function<void()>& fn);

std::string version();

struct TrainOutcome {
  std::filesystem::path out_dir;
  ExperimentData data;
  TrainState state;
  double agreement = 0.0;
};

/// Layout: data/{train,query,gallery}, stage1/, stage2/, loss_stage{1,2}.csv,
/// config.ini and run.json (config snapshot, seed, version, summary).
TrainOutcome train_experiment(const ExperimentConfig& config, std::ostream& log);

/// Accepts a stage-2 checkpoint directory or a run directory holding stage2/.
Stage2Checkpoint load_encoder(const std::filesystem::path& checkpoint);

struct Encoded {
  CodeMatrix codes;
  double us_per_image = 0.0;
};
Encoded encode_dataset(const HashNet<Real>& hash, const Dataset& dataset);

/// Writes the code file plus "<path>.json" with provenance and timing.
void write_encoded(const std::filesystem::path& path, const Encoded& encoded,
                   const nlohmann::json& meta);

/// Writes report.json, pr_curve.csv and p_at_n.csv into dir.
void write_eval_outputs(const std::filesystem::path& dir, const EvalReport& report,
                        const nlohmann::json& config_snapshot);

int cmd_train(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err);

int cmd_encode(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset,
               const std::filesystem::path& out_path, std::ostream& out, std::ostream& err);

/// CSV columns: query_id,rank,gallery_id,distance; top = 0 keeps the whole gallery.
int cmd_retrieve(const std::filesystem::path& query_codes,
                 const std::filesystem::path& gallery_codes, const std::filesystem::path& out_csv,
                 int top, std::ostream& out, std::ostream& err);

struct EvaluateArgs {
  std::filesystem::path query_codes;
  std::filesystem::path gallery_codes;
  /// dataset directories or manifests; default to the datasets recorded
  /// next to the code files by encode
  std::optional<std::filesystem::path> query_labels;
  std::optional<std::filesystem::path> gallery_labels;
  std::optional<std::filesystem::path> config;
  /// default: <output dir>/eval
  std::optional<std::filesystem::path> out_dir;
};
int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream& err);

struct PlotArgs {
  std::filesystem::path report_dir;
  /// stage-1 checkpoint whose attention maps are exported as PNG
  std::optional<std::filesystem::path> attention_checkpoint;
  std::optional<std::filesystem::path> attention_dataset;
  int attention_count = 8;
};
int cmd_plot(const PlotArgs& args, std::ostream& out, std::ostream& err);

/// grid entries look like "train.lambda=0.1,0.3,0.5"; points are the
/// cartesian product, each trained, encoded and evaluated in-process.
int cmd_sweep(const std::filesystem::path& config_path, const std::vector<std::string>& grid,
              std::ostream& out, std::ostream& err);

}  // namespace dagh::cli
