#include "dagh/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <random>

#include "dagh/errors.hpp"

namespace dagh {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace {

json shape_json(const ImageShape& s) { return {s.height, s.width, s.channels}; }

ImageShape shape_from(const json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()};
}

}  // namespace

json to_json(const TrainConfig& c) {
  return {{"code_length", c.code_length},
          {"epochs_stage1", c.epochs_stage1},
          {"epochs_stage2", c.epochs_stage2},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"lr_stage2", c.lr_stage2},
          {"lr_fch_multiplier", c.lr_fch_multiplier},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"lr_step_epochs", c.lr_step_epochs},
          {"lr_step_gamma", c.lr_step_gamma},
          {"nu", c.nu},
          {"lambda", c.lambda},
          {"eps", c.eps},
          {"beta_growth", c.beta.growth},
          {"beta_max", c.beta.beta_max},
          {"seed", c.seed},
          {"attention_widths", c.attention_widths},
          {"hash_conv", c.hash_conv},
          {"hash_hidden", c.hash_hidden},
          {"kernel", c.kernel},
          {"fch_init_std", c.fch_init_std},
          {"grad_clip_norm", c.grad_clip_norm}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.code_length = j.at("code_length").get<int>();
  c.epochs_stage1 = j.at("epochs_stage1").get<int>();
  c.epochs_stage2 = j.at("epochs_stage2").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.lr_stage2 = j.at("lr_stage2").get<double>();
  c.lr_fch_multiplier = j.at("lr_fch_multiplier").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.lr_step_epochs = j.at("lr_step_epochs").get<int>();
  c.lr_step_gamma = j.at("lr_step_gamma").get<double>();
  c.nu = j.at("nu").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.eps = j.at("eps").get<double>();
  c.beta.growth = j.at("beta_growth").get<double>();
  c.beta.beta_max = j.at("beta_max").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.attention_widths = j.at("attention_widths").get<std::vector<int>>();
  c.hash_conv = j.at("hash_conv").get<std::vector<int>>();
  c.hash_hidden = j.at("hash_hidden").get<std::vector<int>>();
  c.kernel = j.at("kernel").get<int>();
  c.fch_init_std = j.at("fch_init_std").get<double>();
  c.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  return c;
}

json to_json(const AttentionConfig& c) {
  return {{"input", shape_json(c.input)}, {"widths", c.widths}, {"kernel", c.kernel}};
}

AttentionConfig attention_config_from_json(const json& j) {
  AttentionConfig c;
  c.input = shape_from(j.at("input"));
  c.widths = j.at("widths").get<std::vector<int>>();
  c.kernel = j.at("kernel").get<int>();
  return c;
}

json to_json(const HashNetConfig& c) {
  return {{"input", shape_json(c.input)},
          {"conv_channels", c.conv_channels},
          {"hidden", c.hidden},
          {"code_length", c.code_length},
          {"kernel", c.kernel},
          {"fch_lr_multiplier", c.fch_lr_multiplier},
          {"fch_init_std", c.fch_init_std}};
}

HashNetConfig hash_config_from_json(const json& j) {
  HashNetConfig c;
  c.input = shape_from(j.at("input"));
  c.conv_channels = j.at("conv_channels").get<std::vector<int>>();
  c.hidden = j.at("hidden").get<std::vector<int>>();
  c.code_length = j.at("code_length").get<int>();
  c.kernel = j.at("kernel").get<int>();
  c.fch_lr_multiplier = j.at("fch_lr_multiplier").get<double>();
  c.fch_init_std = j.at("fch_init_std").get<double>();
  return c;
}

namespace {

json write_blob(const fs::path& path, const nn::ParamSet<Real>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  json table = json::array();
  std::size_t offset = 0;
  for (const auto& p : params) {
    const Eigen::MatrixXf v = p.value.cast<float>();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
    table.push_back({{"name", p.name}, {"rows", v.rows()}, {"cols", v.cols()}, {"offset", offset}});
    offset += static_cast<std::size_t>(v.size());
  }
  if (!out) throw IoError("failed writing " + path.string());
  return table;
}

void read_blob(const fs::path& path, const json& table, nn::ParamSet<Real>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (table.size() != params.size())
    throw IoError(path.string() + ": parameter table has " + std::to_string(table.size()) +
                  " entries, architecture expects " + std::to_string(params.size()));
  std::size_t expected = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& e = table.at(i);
    if (e.at("name").get<std::string>() != p.name || e.at("rows").get<Eigen::Index>() != p.value.rows() ||
        e.at("cols").get<Eigen::Index>() != p.value.cols())
      throw IoError(path.string() + ": parameter " + std::to_string(i) + " (" +
                    e.at("name").get<std::string>() + ") does not match architecture");
    Eigen::MatrixXf v(p.value.rows(), p.value.cols());
    in.seekg(static_cast<std::streamoff>(e.at("offset").get<std::size_t>() * sizeof(float)));
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float))))
      throw IoError(path.string() + ": truncated parameter blob");
    p.value = v.cast<Real>();
    expected += static_cast<std::size_t>(v.size());
  }
  if (fs::file_size(path) != expected * sizeof(float))
    throw IoError(path.string() + ": blob size does not match parameter table");
}

json read_manifest(const fs::path& dir, int stage) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("checkpoint manifest not found: " + path.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  }
  if (m.value("format", "") != "dagh-checkpoint" || m.value("version", 0) != 1)
    throw IoError(path.string() + " is not a version-1 dagh checkpoint");
  if (m.value("stage", 0) != stage)
    throw IoError(path.string() + " is a stage-" + std::to_string(m.value("stage", 0)) +
                  " checkpoint, expected stage " + std::to_string(stage));
  return m;
}

void write_manifest(const fs::path& dir, const json& m) {
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << m.dump(2) << '\n';
}

}  // namespace

void save_stage1_checkpoint(const fs::path& dir, const Stage1Model& model,
                            const TrainConfig& config, int epoch, double beta) {
  fs::create_directories(dir);
  json m{{"format", "dagh-checkpoint"}, {"version", 1},      {"stage", 1},
         {"epoch", epoch},              {"beta", beta},      {"code_length", model.hash.code_length()},
         {"train_config", to_json(config)}};
  m["networks"]["attention"] = {{"config", to_json(model.attention.config())},
                                {"blob", "attention.f32"},
                                {"params", write_blob(dir / "attention.f32", model.attention.params())}};
  m["networks"]["hash1"] = {{"config", to_json(model.hash.config())},
                            {"blob", "hash1.f32"},
                            {"params", write_blob(dir / "hash1.f32", model.hash.params())}};
  write_manifest(dir, m);
}

Stage1Checkpoint load_stage1_checkpoint(const fs::path& dir) {
  const json m = read_manifest(dir, 1);
  try {
    Stage1Checkpoint c;
    c.config = train_config_from_json(m.at("train_config"));
    c.epoch = m.at("epoch").get<int>();
    c.beta = m.at("beta").get<double>();
    std::mt19937_64 rng(0);
    const auto& att = m.at("networks").at("attention");
    const auto& hash = m.at("networks").at("hash1");
    c.model.attention = AttentionNet<Real>(attention_config_from_json(att.at("config")), rng);
    c.model.hash = HashNet<Real>(hash_config_from_json(hash.at("config")), rng);
    read_blob(dir / att.at("blob").get<std::string>(), att.at("params"), c.model.attention.params());
    read_blob(dir / hash.at("blob").get<std::string>(), hash.at("params"), c.model.hash.params());
    return c;
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
}

void save_stage2_checkpoint(const fs::path& dir, const HashNet<Real>& hash,
                            const TrainConfig& config, int epoch) {
  fs::create_directories(dir);
  json m{{"format", "dagh-checkpoint"}, {"version", 1},
         {"stage", 2},                  {"epoch", epoch},
         {"beta", nullptr},             {"code_length", hash.code_length()},
         {"train_config", to_json(config)}};
  m["networks"]["hash2"] = {{"config", to_json(hash.config())},
                            {"blob", "hash2.f32"},
                            {"params", write_blob(dir / "hash2.f32", hash.params())}};
  write_manifest(dir, m);
}

Stage2Checkpoint load_stage2_checkpoint(const fs::path& dir) {
  const json m = read_manifest(dir, 2);
  try {
    Stage2Checkpoint c;
    c.config = train_config_from_json(m.at("train_config"));
    c.epoch = m.at("epoch").get<int>();
    std::mt19937_64 rng(0);
    const auto& hash = m.at("networks").at("hash2");
    c.hash = HashNet<Real>(hash_config_from_json(hash.at("config")), rng);
    read_blob(dir / hash.at("blob").get<std::string>(), hash.at("params"), c.hash.params());
    return c;
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace dagh
