#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dagh/attention.hpp"
#include "dagh/datasets.hpp"
#include "dagh/hashnet.hpp"
#include "dagh/losses.hpp"
#include "dagh/nn.hpp"

namespace dagh {

/// Networks are trained in single precision; checkpoints store the same bits.
using Real = float;

struct TrainConfig {
  int code_length = 16;
  int epochs_stage1 = 30;
  int epochs_stage2 = 30;
  int batch_size = 32;
  double lr = 0.01;
  /// base rate of the second hashing network; the guide loss is a per-bit mean
  double lr_stage2 = 0.1;
  double lr_fch_multiplier = 10.0;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  /// lr is multiplied by lr_step_gamma every lr_step_epochs epochs
  int lr_step_epochs = 10;
  double lr_step_gamma = 0.5;
  double nu = 50.0;
  double lambda = 0.3;
  double eps = 0.001;
  BetaSchedule beta;
  std::uint64_t seed = 0;

  std::vector<int> attention_widths{8, 16, 16};
  std::vector<int> hash_conv{16, 32, 32};
  std::vector<int> hash_hidden{64};
  int kernel = 3;
  double fch_init_std = 0.3;
  /// stage-1 steps rescale the joint gradient to this global L2 norm; 0 disables
  double grad_clip_norm = 1.0;

  void validate() const;
  double learning_rate(int epoch) const;
  double stage2_learning_rate(int epoch) const;
  AttentionConfig attention_config(const ImageShape& shape) const;
  HashNetConfig hash_config(const ImageShape& shape) const;
};

struct EpochRecord {
  int epoch = 0;
  double beta = 1.0;
  double lr = 0.0;
  double sem = 0.0;
  double att = 0.0;
  double penalty = 0.0;
  double guide = 0.0;
  double total = 0.0;
  /// pairs summed per epoch; multiply sem/att by pairs / batches to recover raw sums
  std::size_t pairs = 0;
  std::size_t batches = 0;
  /// stage-1 steps whose gradient was rescaled by grad_clip_norm
  std::size_t clipped = 0;
};

struct Stage1Model {
  AttentionNet<Real> attention;
  HashNet<Real> hash;
};

/// SGD with momentum and L2 weight decay (velocity = mu * v + g + wd * w).
template <typename Scalar>
class Sgd {
 public:
  Sgd(const nn::ParamSet<Scalar>& params, double momentum, double weight_decay)
      : velocity_(params.zeros_like()), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(nn::ParamSet<Scalar>& params, const nn::Grads<Scalar>& grads, double lr) {
    const auto mu = static_cast<Scalar>(momentum_);
    const auto wd = static_cast<Scalar>(weight_decay_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      velocity_[i] = mu * velocity_[i] + grads[i] + wd * p.value;
      p.value -= static_cast<Scalar>(lr) * p.lr_scale * velocity_[i];
    }
  }

 private:
  nn::Grads<Scalar> velocity_;
  double momentum_;
  double weight_decay_;
};

/// Global L2 norm over every gradient block, accumulated in double.
template <typename Scalar, typename... Rest>
double global_norm(const nn::Grads<Scalar>& first, const Rest&... rest) {
  double sq = 0.0;
  auto add = [&sq](const nn::Grads<Scalar>& grads) {
    for (const auto& g : grads) sq += g.template cast<double>().squaredNorm();
  };
  add(first);
  (add(rest), ...);
  return std::sqrt(sq);
}

/// Rescales all blocks together so their global norm is at most max_norm.
/// Returns true when a rescale happened.
template <typename Scalar, typename... Rest>
bool clip_global_norm(double max_norm, nn::Grads<Scalar>& first, Rest&... rest) {
  if (max_norm <= 0.0) return false;
  const double norm = global_norm(first, rest...);
  if (!(norm > max_norm)) return false;
  const auto s = static_cast<Scalar>(max_norm / norm);
  auto scale = [s](nn::Grads<Scalar>& grads) {
    for (auto& g : grads) g *= s;
  };
  scale(first);
  (scale(rest), ...);
  return true;
}

template <typename Scalar>
struct Stage1Objective {
  /// per-pair mean of sem and att, plus the penalty
  LossValue loss;
  std::size_t pairs = 0;
  nn::Grads<Scalar> attention_grads;
  nn::Grads<Scalar> hash_grads;
};

/// Stage-1 loss and gradients for one batch of images through
/// attention -> hashing network -> ATanh. Sem and att are averaged over the
/// B(B-1)/2 unordered pairs.
template <typename Scalar>
Stage1Objective<Scalar> stage1_objective(const AttentionNet<Scalar>& attention,
                                         const HashNet<Scalar>& hash,
                                         const std::vector<nn::FeatureMap<Scalar>>& images,
                                         const SimilarityMatrix& sim, double nu, double lambda,
                                         double beta, double eps) {
  const auto batch = static_cast<Eigen::Index>(images.size());
  const Eigen::Index k = hash.code_length();
  std::vector<FirstStreamCache<Scalar>> caches(images.size());
  Eigen::MatrixXd codes(batch, k);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const auto w = first_stream_forward(images[static_cast<std::size_t>(i)], attention, hash,
                                        caches[static_cast<std::size_t>(i)]);
    codes.row(i) = atanh_activate(w, beta, eps).code.template cast<double>().transpose();
  }

  Stage1Objective<Scalar> out;
  out.pairs = static_cast<std::size_t>(batch * (batch - 1) / 2);
  const double scale = out.pairs > 0 ? 1.0 / static_cast<double>(out.pairs) : 0.0;
  const LossValue raw = stage1_loss(codes, sim, nu, lambda, beta, eps);
  const double sem = raw.components.at("sem") * scale;
  const double att = raw.components.at("att") * scale;
  const double penalty = raw.components.at("penalty");
  out.loss.components = {{"sem", sem}, {"att", att}, {"penalty", penalty}};
  out.loss.value = sem + nu * att + penalty;

  const Eigen::MatrixXd dcodes =
      scale * (semantic_loss_grad(codes, sim) + nu * attention_loss_grad(codes, sim, lambda));
  const Eigen::MatrixXd dw = dcodes.cwiseProduct(atanh_derivative(codes, beta));

  out.attention_grads = attention.params().zeros_like();
  out.hash_grads = hash.params().zeros_like();
  for (Eigen::Index i = 0; i < batch; ++i) {
    const ContinuousCode<Scalar> g = dw.row(i).transpose().template cast<Scalar>();
    first_stream_backward(caches[static_cast<std::size_t>(i)], g, attention, hash,
                          out.attention_grads, out.hash_grads);
  }
  return out;
}

Stage1Model init_stage1(const ImageShape& shape, const TrainConfig& config);
HashNet<Real> init_stage2(const ImageShape& shape, const TrainConfig& config);

struct Stage1Result {
  Stage1Model model;
  std::vector<EpochRecord> history;
  /// schedule position after the last epoch: beta(epochs_stage1)
  double beta = 1.0;
};

/// Joint SGD on attention + first hashing network for epochs_stage1 epochs.
Stage1Result train_stage1(const Dataset& dataset, const TrainConfig& config);
Stage1Result train_stage1(const Dataset& dataset, const TrainConfig& config, Stage1Model initial);

/// Attention-guided codes of every image as {0,1} rows, in id order.
BitMatrix extract_attention_codes(const Dataset& dataset, const Stage1Model& model);

struct Stage2Result {
  HashNet<Real> hash;
  std::vector<EpochRecord> history;
};

/// Fits the second hashing network to the targets under the guide loss.
Stage2Result train_stage2(const Dataset& dataset, const BitMatrix& targets,
                          const TrainConfig& config);
Stage2Result train_stage2(const Dataset& dataset, const BitMatrix& targets,
                          const TrainConfig& config, HashNet<Real> initial);

/// Fraction of bits where sign(Hash(x | second network)) matches the targets.
double bit_agreement(const Dataset& dataset, const HashNet<Real>& hash, const BitMatrix& targets);

struct TrainState {
  Stage1Model stage1;
  HashNet<Real> stage2;
  BitMatrix targets;
  std::vector<EpochRecord> history_stage1;
  std::vector<EpochRecord> history_stage2;
  int epochs_stage1 = 0;
  int epochs_stage2 = 0;
  double beta = 1.0;
  std::uint64_t seed = 0;
};

/// Stage 1, code extraction, stage 2. With an output directory, checkpoints
/// (stage1/, stage2/) and loss CSVs are written after each stage.
TrainState run_pipeline(const Dataset& dataset, const TrainConfig& config,
                        const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Re-runs extraction and stage 2 from a stage-1 checkpoint directory.
TrainState resume_stage2(const Dataset& dataset, const TrainConfig& config,
                         const std::filesystem::path& stage1_dir,
                         const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Columns: epoch,sem,att,penalty,guide,total,clipped
void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

}  // namespace dagh
