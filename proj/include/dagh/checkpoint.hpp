#pragma once

// Checkpoint directory layout:
//   manifest.json   format/version, stage, epoch, beta, code_length, the
//                   training config, and per network its architecture
//                   config, blob file name and parameter table
//                   (name, rows, cols, offset in floats)
//   <network>.f32   parameters as little-endian float32, column-major per
//                   tensor, tensors concatenated in table order

#include <filesystem>

#include <nlohmann/json.hpp>

#include "dagh/trainer.hpp"

namespace dagh {

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AttentionConfig& config);
AttentionConfig attention_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HashNetConfig& config);
HashNetConfig hash_config_from_json(const nlohmann::json& j);

struct Stage1Checkpoint {
  Stage1Model model;
  TrainConfig config;
  int epoch = 0;
  double beta = 1.0;
};

struct Stage2Checkpoint {
  HashNet<Real> hash;
  TrainConfig config;
  int epoch = 0;
};

void save_stage1_checkpoint(const std::filesystem::path& dir, const Stage1Model& model,
                            const TrainConfig& config, int epoch, double beta);
Stage1Checkpoint load_stage1_checkpoint(const std::filesystem::path& dir);

void save_stage2_checkpoint(const std::filesystem::path& dir, const HashNet<Real>& hash,
                            const TrainConfig& config, int epoch);
Stage2Checkpoint load_stage2_checkpoint(const std::filesystem::path& dir);

}  // namespace dagh
