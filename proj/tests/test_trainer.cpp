#include "doctest.h"

#include <fstream>
#include <random>
#include <sstream>

#include "dagh/checkpoint.hpp"
#include "dagh/trainer.hpp"
#include "support.hpp"

using namespace dagh;
namespace fs = std::filesystem;
using testing::max_param_fd_error;
using testing::TempDir;

namespace {

TrainConfig toy_config() {
  TrainConfig c;
  c.code_length = 8;
  c.epochs_stage1 = 3;
  c.epochs_stage2 = 3;
  c.batch_size = 6;
  c.attention_widths = {2, 3};
  c.hash_conv = {4, 4};
  c.hash_hidden = {8};
  c.seed = 5;
  return c;
}

Dataset toy_data() { return generate_synthetic(3, 6, {8, 8, 3}, 0.2, 17); }

template <typename Scalar>
bool same_params(const nn::ParamSet<Scalar>& a, const nn::ParamSet<Scalar>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.value(i) != b.value(i)) return false;
  return true;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("zero epochs return the initial networks") {
  const Dataset data = toy_data();
  TrainConfig c = toy_config();
  c.epochs_stage1 = 0;
  c.epochs_stage2 = 0;
  const auto state = run_pipeline(data, c);
  const auto init1 = init_stage1(data.image_shape(), c);
  const auto init2 = init_stage2(data.image_shape(), c);
  CHECK(state.history_stage1.empty());
  CHECK(state.history_stage2.empty());
  CHECK(same_params(state.stage1.attention.params(), init1.attention.params()));
  CHECK(same_params(state.stage1.hash.params(), init1.hash.params()));
  CHECK(same_params(state.stage2.params(), init2.params()));
  CHECK(state.beta == 1.0);
  CHECK(state.targets.rows() == 18);
  CHECK(state.targets.cols() == 8);
}

TEST_CASE("the two hashing networks start from different weights") {
  const Dataset data = toy_data();
  const auto init1 = init_stage1(data.image_shape(), toy_config());
  const auto init2 = init_stage2(data.image_shape(), toy_config());
  CHECK_FALSE(same_params(init1.hash.params(), init2.params()));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const Dataset data = toy_data();
  TrainConfig c = toy_config();
  c.lr = 0.0;
  c.lr_stage2 = 0.0;
  const auto state = run_pipeline(data, c);
  const auto init1 = init_stage1(data.image_shape(), c);
  CHECK(same_params(state.stage1.attention.params(), init1.attention.params()));
  CHECK(same_params(state.stage1.hash.params(), init1.hash.params()));
  CHECK(same_params(state.stage2.params(), init_stage2(data.image_shape(), c).params()));
  CHECK(state.history_stage1.size() == 3u);
}

TEST_CASE("stage two leaves the first stream untouched") {
  const Dataset data = toy_data();
  const TrainConfig c = toy_config();
  const auto alone = train_stage1(data, c);
  const auto state = run_pipeline(data, c);
  CHECK(same_params(state.stage1.attention.params(), alone.model.attention.params()));
  CHECK(same_params(state.stage1.hash.params(), alone.model.hash.params()));
  CHECK(state.targets == extract_attention_codes(data, alone.model));
}

TEST_CASE("stage one moves the attention network") {
  const Dataset data = toy_data();
  const TrainConfig c = toy_config();
  const auto init = init_stage1(data.image_shape(), c);
  const auto trained = train_stage1(data, c);
  CHECK_FALSE(same_params(trained.model.attention.params(), init.attention.params()));
  CHECK_FALSE(same_params(trained.model.hash.params(), init.hash.params()));
}

TEST_CASE("beta follows the schedule") {
  const Dataset data = toy_data();
  TrainConfig c = toy_config();
  c.epochs_stage1 = 5;
  c.epochs_stage2 = 0;
  c.beta = {2.0, 8.0};
  const auto r = train_stage1(data, c);
  REQUIRE(r.history.size() == 5u);
  const double expected[] = {1, 2, 4, 8, 8};
  for (std::size_t t = 0; t < 5; ++t) {
    CHECK(r.history[t].beta == expected[t]);
    CHECK(r.history[t].penalty == doctest::Approx(c.eps / (expected[t] * expected[t])));
    if (t > 0) CHECK(r.history[t].beta >= r.history[t - 1].beta);
  }
  CHECK(r.beta == 8.0);
  c.beta = {2.0, 1024.0};
  CHECK(train_stage1(data, c).beta == 32.0);
}

TEST_CASE("learning rate steps") {
  TrainConfig c;
  c.lr = 0.01;
  c.lr_stage2 = 0.1;
  CHECK(c.learning_rate(0) == 0.01);
  CHECK(c.learning_rate(9) == 0.01);
  CHECK(c.learning_rate(10) == 0.005);
  CHECK(c.learning_rate(25) == doctest::Approx(0.0025));
  CHECK(c.stage2_learning_rate(10) == doctest::Approx(0.05));
}

TEST_CASE("training is deterministic") {
  const Dataset data = toy_data();
  const auto a = run_pipeline(data, toy_config());
  const auto b = run_pipeline(data, toy_config());
  REQUIRE(a.history_stage1.size() == b.history_stage1.size());
  for (std::size_t i = 0; i < a.history_stage1.size(); ++i) {
    CHECK(a.history_stage1[i].total == b.history_stage1[i].total);
    CHECK(a.history_stage1[i].clipped == b.history_stage1[i].clipped);
  }
  for (std::size_t i = 0; i < a.history_stage2.size(); ++i)
    CHECK(a.history_stage2[i].guide == b.history_stage2[i].guide);
  CHECK(same_params(a.stage2.params(), b.stage2.params()));
  CHECK(a.targets == b.targets);

  TrainConfig other = toy_config();
  other.seed = 6;
  CHECK_FALSE(same_params(run_pipeline(data, other).stage2.params(), a.stage2.params()));
}

TEST_CASE("history records batches and pairs") {
  const Dataset data = toy_data();
  const auto r = train_stage1(data, toy_config());
  for (const auto& rec : r.history) {
    CHECK(rec.batches == 3u);
    CHECK(rec.pairs == 3u * 15u);
    CHECK(rec.total == doctest::Approx(rec.sem + 50.0 * rec.att + rec.penalty));
    CHECK(rec.clipped <= rec.batches);
  }
}

TEST_CASE("resuming stage two matches the full pipeline") {
  const Dataset data = toy_data();
  const TrainConfig c = toy_config();
  TempDir dir("resume");
  const auto full = run_pipeline(data, c, dir.path() / "full");
  const auto resumed = resume_stage2(data, c, dir.path() / "full" / "stage1", dir.path() / "again");
  CHECK(resumed.targets == full.targets);
  CHECK(same_params(resumed.stage2.params(), full.stage2.params()));
  CHECK(resumed.beta == full.beta);
  CHECK(slurp(dir.path() / "again" / "loss_stage2.csv") ==
        slurp(dir.path() / "full" / "loss_stage2.csv"));
}

TEST_CASE("stage one gradients match finite differences") {
  const Dataset data = generate_synthetic(2, 2, {4, 4, 2}, 0.2, 3);
  TrainConfig c = toy_config();
  c.attention_widths = {2, 2};
  c.hash_conv = {3, 3};
  c.hash_hidden = {4};
  c.code_length = 5;
  const auto init = init_stage1(data.image_shape(), c);
  auto att = init.attention.cast<double>();
  auto hash = init.hash.cast<double>();
  std::vector<nn::FeatureMap<double>> images;
  for (const auto& s : data.samples()) images.push_back(to_feature_map<double>(s.pixels, data.image_shape()));
  const SimilarityMatrix sim = similarity_matrix(data.labels());
  for (double beta : {1.0, 2.0}) {
    const auto obj = stage1_objective(att, hash, images, sim, 2.0, 0.05, beta, 1e-3);
    CHECK(obj.pairs == 6u);
    const auto loss = [&] {
      return stage1_objective(att, hash, images, sim, 2.0, 0.05, beta, 1e-3).loss.value;
    };
    CHECK(max_param_fd_error(hash.params(), obj.hash_grads, loss, 1e-5) < 1e-4);
    CHECK(max_param_fd_error(att.params(), obj.attention_grads, loss, 1e-5) < 1e-4);
  }
}

TEST_CASE("global norm clipping") {
  nn::Grads<double> a{Eigen::MatrixXd::Constant(1, 1, 3.0)};
  nn::Grads<double> b{Eigen::MatrixXd::Constant(1, 1, 4.0)};
  CHECK(global_norm(a, b) == 5.0);
  CHECK_FALSE(clip_global_norm(5.0, a, b));
  CHECK_FALSE(clip_global_norm(0.0, a, b));
  CHECK(a[0](0) == 3.0);
  CHECK(clip_global_norm(1.0, a, b));
  CHECK(a[0](0) == doctest::Approx(0.6));
  CHECK(b[0](0) == doctest::Approx(0.8));
  CHECK(global_norm(a, b) == doctest::Approx(1.0));
}

TEST_CASE("disabling clipping records no clipped steps") {
  const Dataset data = toy_data();
  TrainConfig c = toy_config();
  c.grad_clip_norm = 0.0;
  for (const auto& rec : train_stage1(data, c).history) CHECK(rec.clipped == 0u);
}

TEST_CASE("sgd step") {
  nn::ParamSet<double> p;
  p.add("w", Eigen::MatrixXd::Constant(1, 1, 1.0));
  p.add("f", Eigen::MatrixXd::Constant(1, 1, 1.0), 10.0);
  Sgd<double> opt(p, 0.9, 0.1);
  nn::Grads<double> g{Eigen::MatrixXd::Constant(1, 1, 0.5), Eigen::MatrixXd::Constant(1, 1, 0.5)};
  opt.step(p, g, 0.1);
  // v = 0.5 + 0.1 * 1
  CHECK(p.value(0)(0) == doctest::Approx(1.0 - 0.1 * 0.6));
  CHECK(p.value(1)(0) == doctest::Approx(1.0 - 1.0 * 0.6));
  opt.step(p, g, 0.1);
  CHECK(p.value(0)(0) == doctest::Approx(0.94 - 0.1 * (0.9 * 0.6 + 0.5 + 0.1 * 0.94)));
}

TEST_CASE("stage two input validation") {
  const Dataset data = toy_data();
  const TrainConfig c = toy_config();
  CHECK_THROWS_AS(train_stage2(data, BitMatrix::Zero(5, 8), c), InvalidInput);
  CHECK_THROWS_AS(train_stage2(data, BitMatrix::Zero(18, 7), c), InvalidInput);
  CHECK_THROWS_AS(train_stage2(data, BitMatrix::Constant(18, 8, 2), c), InvalidInput);
  CHECK_THROWS_AS(train_stage1(generate_synthetic(1, 6, {8, 8, 3}, 0.2, 1), c), InvalidInput);
}

TEST_CASE("stage two fits fixed targets") {
  const Dataset data = toy_data();
  TrainConfig c = toy_config();
  c.epochs_stage2 = 40;
  BitMatrix targets(18, 8);
  for (Eigen::Index i = 0; i < 18; ++i)
    for (Eigen::Index k = 0; k < 8; ++k)
      targets(i, k) = static_cast<std::uint8_t>((*data[static_cast<std::size_t>(i)].labels.begin() + k) % 2);
  const auto r = train_stage2(data, targets, c);
  CHECK(r.history.back().guide < r.history.front().guide);
  CHECK(bit_agreement(data, r.hash, targets) > 0.9);
}

TEST_CASE("config validation") {
  TrainConfig c = toy_config();
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  c.lambda = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  c.grad_clip_norm = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  c.epochs_stage1 = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(toy_config().validate());
}

TEST_CASE("checkpoint round trip") {
  const Dataset data = toy_data();
  const TrainConfig c = toy_config();
  const auto model = train_stage1(data, c).model;
  TempDir dir("ckpt");
  save_stage1_checkpoint(dir.path() / "s1", model, c, 3, 8.0);
  const auto back = load_stage1_checkpoint(dir.path() / "s1");
  CHECK(same_params(back.model.attention.params(), model.attention.params()));
  CHECK(same_params(back.model.hash.params(), model.hash.params()));
  CHECK(back.epoch == 3);
  CHECK(back.beta == 8.0);
  CHECK(to_json(back.config) == to_json(c));
  CHECK(extract_attention_codes(data, back.model) == extract_attention_codes(data, model));

  const auto h2 = init_stage2(data.image_shape(), c);
  save_stage2_checkpoint(dir.path() / "s2", h2, c, 4);
  const auto back2 = load_stage2_checkpoint(dir.path() / "s2");
  CHECK(same_params(back2.hash.params(), h2.params()));
  CHECK(back2.epoch == 4);
  CHECK(back2.hash.config().fch_lr_multiplier == c.lr_fch_multiplier);
}

TEST_CASE("train config json round trip") {
  TrainConfig c = toy_config();
  c.lambda = 0.1;
  c.beta = {1.5, 64.0};
  c.grad_clip_norm = 0.0;
  const auto back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.beta.growth == 1.5);
  CHECK(back.hash_conv == c.hash_conv);
}

TEST_CASE("checkpoint loading errors") {
  const Dataset data = toy_data();
  const TrainConfig c = toy_config();
  TempDir dir("ckpt_err");
  CHECK_THROWS_AS(load_stage1_checkpoint(dir.path() / "missing"), IoError);

  save_stage2_checkpoint(dir.path() / "s2", init_stage2(data.image_shape(), c), c, 1);
  CHECK_THROWS_AS(load_stage1_checkpoint(dir.path() / "s2"), IoError);

  fs::copy(dir.path() / "s2", dir.path() / "short");
  fs::resize_file(dir.path() / "short" / "hash2.f32", 16);
  CHECK_THROWS_AS(load_stage2_checkpoint(dir.path() / "short"), IoError);

  fs::copy(dir.path() / "s2", dir.path() / "long");
  {
    std::ofstream out(dir.path() / "long" / "hash2.f32", std::ios::binary | std::ios::app);
    out << "xxxx";
  }
  CHECK_THROWS_AS(load_stage2_checkpoint(dir.path() / "long"), IoError);

  fs::create_directories(dir.path() / "garbage");
  std::ofstream(dir.path() / "garbage" / "manifest.json") << "{not json";
  CHECK_THROWS_AS(load_stage2_checkpoint(dir.path() / "garbage"), IoError);

  fs::create_directories(dir.path() / "partial");
  std::ofstream(dir.path() / "partial" / "manifest.json")
      << R"({"format":"dagh-checkpoint","version":1,"stage":2})";
  CHECK_THROWS_AS(load_stage2_checkpoint(dir.path() / "partial"), IoError);
}

TEST_CASE("loss csv layout") {
  const Dataset data = toy_data();
  TempDir dir("csv");
  const auto state = run_pipeline(data, toy_config(), dir.path());
  std::ifstream in(dir.path() / "loss_stage1.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,sem,att,penalty,guide,total,clipped");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == 3);
  CHECK(fs::exists(dir.path() / "loss_stage2.csv"));
  CHECK(fs::exists(dir.path() / "stage1" / "manifest.json"));
  CHECK(fs::exists(dir.path() / "stage2" / "hash2.f32"));
}
