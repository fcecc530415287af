#include "dagh/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

#include "dagh/checkpoint.hpp"
#include "dagh/errors.hpp"

namespace dagh {

namespace fs = std::filesystem;

namespace {

// seed streams, kept apart so stage 2 can be replayed without stage 1
constexpr std::uint64_t kInitStage1 = 11;
constexpr std::uint64_t kInitStage2 = 12;
constexpr std::uint64_t kBatchStage2 = 2;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid training config: " + what);
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{seed, stream};
  return std::mt19937_64(seq);
}

std::vector<nn::FeatureMap<Real>> gather(const Dataset& dataset,
                                         const std::vector<std::size_t>& ids) {
  std::vector<nn::FeatureMap<Real>> out;
  out.reserve(ids.size());
  for (auto id : ids)
    out.push_back(to_feature_map<Real>(dataset[id].pixels, dataset.image_shape()));
  return out;
}

void check_finite(const char* stage, int epoch, const LossValue& loss) {
  for (const auto& [name, v] : loss.components)
    if (!std::isfinite(v)) throw TrainingDivergence(stage, epoch, name);
  if (!std::isfinite(loss.value)) throw TrainingDivergence(stage, epoch, "total");
}

}  // namespace

void TrainConfig::validate() const {
  require(code_length >= 1, "code_length must be >= 1");
  require(epochs_stage1 >= 0 && epochs_stage2 >= 0, "epochs must be >= 0");
  require(batch_size >= 2, "batch_size must be >= 2");
  require(lr >= 0.0 && lr_stage2 >= 0.0 && lr_fch_multiplier >= 0.0, "learning rates must be >= 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(lr_step_epochs >= 1, "lr_step_epochs must be >= 1");
  require(lr_step_gamma > 0.0, "lr_step_gamma must be > 0");
  require(nu >= 0.0, "nu must be >= 0");
  require(lambda > 0.0, "lambda must be > 0");
  require(eps >= 0.0, "eps must be >= 0");
  require(beta.growth > 1.0, "beta_growth must be > 1");
  require(beta.beta_max >= 1.0, "beta_max must be >= 1");
  require(fch_init_std >= 0.0, "fch_init_std must be >= 0");
  require(grad_clip_norm >= 0.0, "grad_clip_norm must be >= 0");
  require(kernel >= 1 && kernel % 2 == 1, "kernel must be odd");
}

double TrainConfig::learning_rate(int epoch) const {
  return lr * std::pow(lr_step_gamma, epoch / lr_step_epochs);
}

double TrainConfig::stage2_learning_rate(int epoch) const {
  return lr_stage2 * std::pow(lr_step_gamma, epoch / lr_step_epochs);
}

AttentionConfig TrainConfig::attention_config(const ImageShape& shape) const {
  return {shape, attention_widths, kernel};
}

HashNetConfig TrainConfig::hash_config(const ImageShape& shape) const {
  HashNetConfig c;
  c.input = shape;
  c.conv_channels = hash_conv;
  c.hidden = hash_hidden;
  c.code_length = code_length;
  c.kernel = kernel;
  c.fch_lr_multiplier = lr_fch_multiplier;
  c.fch_init_std = fch_init_std;
  return c;
}

Stage1Model init_stage1(const ImageShape& shape, const TrainConfig& config) {
  config.validate();
  auto rng = stream_rng(config.seed, kInitStage1);
  Stage1Model m;
  m.attention = AttentionNet<Real>(config.attention_config(shape), rng);
  m.hash = HashNet<Real>(config.hash_config(shape), rng);
  return m;
}

HashNet<Real> init_stage2(const ImageShape& shape, const TrainConfig& config) {
  config.validate();
  auto rng = stream_rng(config.seed, kInitStage2);
  return HashNet<Real>(config.hash_config(shape), rng);
}

Stage1Result train_stage1(const Dataset& dataset, const TrainConfig& config) {
  return train_stage1(dataset, config, init_stage1(dataset.image_shape(), config));
}

Stage1Result train_stage1(const Dataset& dataset, const TrainConfig& config, Stage1Model initial) {
  config.validate();
  if (dataset.num_classes() < 2) throw InvalidInput("train_stage1: dataset needs >= 2 classes");
  Stage1Result result{std::move(initial), {}, config.beta.at(config.epochs_stage1)};
  auto& model = result.model;
  Sgd<Real> att_opt(model.attention.params(), config.momentum, config.weight_decay);
  Sgd<Real> hash_opt(model.hash.params(), config.momentum, config.weight_decay);
  const PairBatchStream stream(dataset, config.batch_size, config.seed);

  for (int epoch = 0; epoch < config.epochs_stage1; ++epoch) {
    const double beta = config.beta.at(epoch);
    const double lr = config.learning_rate(epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.beta = beta;
    rec.lr = lr;
    for (const auto& batch : stream.epoch(epoch)) {
      auto obj = stage1_objective(model.attention, model.hash, gather(dataset, batch.ids),
                                  batch.sim, config.nu, config.lambda, beta, config.eps);
      check_finite("stage 1", epoch, obj.loss);
      if (clip_global_norm(config.grad_clip_norm, obj.attention_grads, obj.hash_grads))
        ++rec.clipped;
      att_opt.step(model.attention.params(), obj.attention_grads, lr);
      hash_opt.step(model.hash.params(), obj.hash_grads, lr);
      rec.sem += obj.loss.components.at("sem");
      rec.att += obj.loss.components.at("att");
      rec.total += obj.loss.value;
      rec.pairs += obj.pairs;
      ++rec.batches;
    }
    if (rec.batches > 0) {
      const auto nb = static_cast<double>(rec.batches);
      rec.sem /= nb;
      rec.att /= nb;
      rec.total /= nb;
    }
    rec.penalty = config.eps / (beta * beta);
    if (!model.attention.params().all_finite() || !model.hash.params().all_finite())
      throw TrainingDivergence("stage 1", epoch, "parameters");
    result.history.push_back(rec);
  }
  return result;
}

BitMatrix extract_attention_codes(const Dataset& dataset, const Stage1Model& model) {
  BitMatrix bits(static_cast<Eigen::Index>(dataset.size()), model.hash.code_length());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto code = encode_attention_guided(
        to_feature_map<Real>(dataset[i].pixels, dataset.image_shape()), model.attention, model.hash);
    bits.row(static_cast<Eigen::Index>(i)) = code_to_bits(code).transpose();
  }
  return bits;
}

Stage2Result train_stage2(const Dataset& dataset, const BitMatrix& targets,
                          const TrainConfig& config) {
  return train_stage2(dataset, targets, config, init_stage2(dataset.image_shape(), config));
}

Stage2Result train_stage2(const Dataset& dataset, const BitMatrix& targets,
                          const TrainConfig& config, HashNet<Real> initial) {
  config.validate();
  if (targets.rows() != static_cast<Eigen::Index>(dataset.size()))
    throw InvalidInput("train_stage2: " + std::to_string(targets.rows()) + " target rows for " +
                       std::to_string(dataset.size()) + " images");
  if (targets.cols() != initial.code_length())
    throw InvalidInput("train_stage2: target width does not match code length");
  if ((targets.array() > 1).any()) throw InvalidInput("train_stage2: targets must be 0 or 1");

  Stage2Result result{std::move(initial), {}};
  auto& hash = result.hash;
  Sgd<Real> opt(hash.params(), config.momentum, config.weight_decay);
  const Eigen::Index k = hash.code_length();

  for (int epoch = 0; epoch < config.epochs_stage2; ++epoch) {
    const double lr = config.stage2_learning_rate(epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    const auto order = epoch_permutation(dataset.size(), config.seed, kBatchStage2, epoch);
    for (const auto& ids : chunk(order, config.batch_size, 1)) {
      const auto images = gather(dataset, ids);
      std::vector<typename HashNet<Real>::Cache> caches(ids.size());
      Eigen::MatrixXd logits(static_cast<Eigen::Index>(ids.size()), k);
      BitMatrix batch_targets(static_cast<Eigen::Index>(ids.size()), k);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        logits.row(row) = hash.forward(images[i], caches[i]).cast<double>().transpose();
        batch_targets.row(row) = targets.row(static_cast<Eigen::Index>(ids[i]));
      }
      LossValue loss;
      loss.value = guide_loss(logits, batch_targets);
      loss.components = {{"guide", loss.value}};
      check_finite("stage 2", epoch, loss);
      const Eigen::MatrixXd dlogits = guide_grad(logits, batch_targets);
      auto grads = hash.params().zeros_like();
      for (std::size_t i = 0; i < ids.size(); ++i)
        hash.backward(caches[i], dlogits.row(static_cast<Eigen::Index>(i)).transpose().cast<Real>(),
                      grads, false);
      opt.step(hash.params(), grads, lr);
      rec.guide += loss.value;
      ++rec.batches;
    }
    if (rec.batches > 0) rec.guide /= static_cast<double>(rec.batches);
    rec.total = rec.guide;
    if (!hash.params().all_finite()) throw TrainingDivergence("stage 2", epoch, "parameters");
    result.history.push_back(rec);
  }
  return result;
}

double bit_agreement(const Dataset& dataset, const HashNet<Real>& hash, const BitMatrix& targets) {
  if (targets.rows() != static_cast<Eigen::Index>(dataset.size()))
    throw InvalidInput("bit_agreement: target rows do not match dataset");
  std::size_t agree = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto bits = code_to_bits(
        encode_final(to_feature_map<Real>(dataset[i].pixels, dataset.image_shape()), hash));
    agree += static_cast<std::size_t>(
        (bits.transpose().array() == targets.row(static_cast<Eigen::Index>(i)).array()).count());
  }
  return static_cast<double>(agree) / static_cast<double>(targets.size());
}

void write_loss_csv(const fs::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,sem,att,penalty,guide,total,clipped\n" << std::setprecision(17);
  for (const auto& r : history)
    out << r.epoch << ',' << r.sem << ',' << r.att << ',' << r.penalty << ',' << r.guide << ','
        << r.total << ',' << r.clipped << '\n';
}

namespace {

TrainState finish_stage2(const Dataset& dataset, const TrainConfig& config, TrainState state,
                         const std::optional<fs::path>& out_dir) {
  state.targets = extract_attention_codes(dataset, state.stage1);
  auto stage2 = train_stage2(dataset, state.targets, config);
  state.stage2 = std::move(stage2.hash);
  state.history_stage2 = std::move(stage2.history);
  state.epochs_stage2 = config.epochs_stage2;
  if (out_dir) {
    save_stage2_checkpoint(*out_dir / "stage2", state.stage2, config, state.epochs_stage2);
    write_loss_csv(*out_dir / "loss_stage2.csv", state.history_stage2);
  }
  return state;
}

}  // namespace

TrainState run_pipeline(const Dataset& dataset, const TrainConfig& config,
                        const std::optional<fs::path>& out_dir) {
  config.validate();
  TrainState state;
  state.seed = config.seed;
  auto stage1 = train_stage1(dataset, config);
  state.stage1 = std::move(stage1.model);
  state.history_stage1 = std::move(stage1.history);
  state.beta = stage1.beta;
  state.epochs_stage1 = config.epochs_stage1;
  if (out_dir) {
    fs::create_directories(*out_dir);
    save_stage1_checkpoint(*out_dir / "stage1", state.stage1, config, state.epochs_stage1,
                           state.beta);
    write_loss_csv(*out_dir / "loss_stage1.csv", state.history_stage1);
  }
  return finish_stage2(dataset, config, std::move(state), out_dir);
}

TrainState resume_stage2(const Dataset& dataset, const TrainConfig& config,
                         const fs::path& stage1_dir, const std::optional<fs::path>& out_dir) {
  config.validate();
  auto ckpt = load_stage1_checkpoint(stage1_dir);
  TrainState state;
  state.seed = config.seed;
  state.stage1 = std::move(ckpt.model);
  state.epochs_stage1 = ckpt.epoch;
  state.beta = ckpt.beta;
  if (out_dir) fs::create_directories(*out_dir);
  return finish_stage2(dataset, config, std::move(state), out_dir);
}

}  // namespace dagh
