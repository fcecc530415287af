#include "dagh/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <system_error>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dagh/attention.hpp"
#include "dagh/checkpoint.hpp"
#include "dagh/errors.hpp"
#include "dagh/hashnet.hpp"

namespace dagh {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
void parse_number(const std::string& text, T& out) {
  const std::string s = trim(text);
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  if (s.empty() || ec != std::errc() || ptr != end) throw ConfigError("not a number: '" + s + "'");
}

void parse_value(const std::string& s, int& out) { parse_number(s, out); }
void parse_value(const std::string& s, double& out) { parse_number(s, out); }
void parse_value(const std::string& s, std::uint64_t& out) { parse_number(s, out); }
void parse_value(const std::string& s, std::string& out) { out = trim(s); }
void parse_value(const std::string& s, fs::path& out) { out = trim(s); }

void parse_value(const std::string& s, std::vector<int>& out) {
  std::vector<int> values;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    int v = 0;
    parse_number(item, v);
    values.push_back(v);
  }
  out = std::move(values);
}

std::string format_value(int v) { return std::to_string(v); }
std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(const std::string& v) { return v; }
std::string format_value(const fs::path& v) { return v.string(); }

std::string format_value(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_value(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Key {
  std::string section;
  std::string name;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename Access>
Key key(const char* section, const char* name, Access access) {
  return {section, name, [access](const ExperimentConfig& c) { return format_value(access(c)); },
          [access](ExperimentConfig& c, const std::string& v) { parse_value(v, access(c)); }};
}

#define DAGH_KEY(section, name, member) \
  key(section, name, [](auto& c) -> auto& { return c.member; })

const std::vector<Key>& keys() {
  static const std::vector<Key> table{
      DAGH_KEY("dataset", "kind", dataset.kind),
      DAGH_KEY("dataset", "path", dataset.path),
      DAGH_KEY("dataset", "n_classes", dataset.n_classes),
      DAGH_KEY("dataset", "train_per_class", dataset.train_per_class),
      DAGH_KEY("dataset", "query_per_class", dataset.query_per_class),
      DAGH_KEY("dataset", "gallery_per_class", dataset.gallery_per_class),
      DAGH_KEY("dataset", "height", dataset.shape.height),
      DAGH_KEY("dataset", "width", dataset.shape.width),
      DAGH_KEY("dataset", "channels", dataset.shape.channels),
      DAGH_KEY("dataset", "noise", dataset.noise),
      DAGH_KEY("dataset", "seed", dataset.seed),
      DAGH_KEY("model", "code_length", train.code_length),
      DAGH_KEY("model", "attention_widths", train.attention_widths),
      DAGH_KEY("model", "hash_conv", train.hash_conv),
      DAGH_KEY("model", "hash_hidden", train.hash_hidden),
      DAGH_KEY("model", "kernel", train.kernel),
      DAGH_KEY("model", "fch_init_std", train.fch_init_std),
      DAGH_KEY("train", "epochs_stage1", train.epochs_stage1),
      DAGH_KEY("train", "epochs_stage2", train.epochs_stage2),
      DAGH_KEY("train", "batch_size", train.batch_size),
      DAGH_KEY("train", "lr", train.lr),
      DAGH_KEY("train", "lr_stage2", train.lr_stage2),
      DAGH_KEY("train", "lr_fch_multiplier", train.lr_fch_multiplier),
      DAGH_KEY("train", "momentum", train.momentum),
      DAGH_KEY("train", "weight_decay", train.weight_decay),
      DAGH_KEY("train", "lr_step_epochs", train.lr_step_epochs),
      DAGH_KEY("train", "lr_step_gamma", train.lr_step_gamma),
      DAGH_KEY("train", "nu", train.nu),
      DAGH_KEY("train", "lambda", train.lambda),
      DAGH_KEY("train", "eps", train.eps),
      DAGH_KEY("train", "beta_growth", train.beta.growth),
      DAGH_KEY("train", "beta_max", train.beta.beta_max),
      DAGH_KEY("train", "grad_clip_norm", train.grad_clip_norm),
      DAGH_KEY("train", "seed", train.seed),
      DAGH_KEY("eval", "cutoff", eval.cutoff),
      DAGH_KEY("eval", "ns", eval.ns),
      DAGH_KEY("output", "dir", output_dir),
  };
  return table;
}

#undef DAGH_KEY

const Key& find_key(const std::string& section, const std::string& name) {
  for (const auto& k : keys())
    if (k.section == section && k.name == name) return k;
  throw ConfigError("unknown config key [" + section + "] " + name);
}

void set_key(ExperimentConfig& config, const Key& k, const std::string& value) {
  try {
    k.set(config, value);
  } catch (const ConfigError& e) {
    throw ConfigError("[" + k.section + "] " + k.name + ": " + e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  const auto fail = [](const std::string& what) { throw ConfigError("invalid config: " + what); };
  if (dataset.kind != "synthetic" && dataset.kind != "cifar10")
    fail("[dataset] kind must be synthetic or cifar10, got '" + dataset.kind + "'");
  if (dataset.kind == "cifar10") {
    if (dataset.path.empty()) fail("[dataset] path is required for cifar10");
    if (dataset.shape.height != 32 || dataset.shape.width != 32 || dataset.shape.channels != 3)
      fail("[dataset] cifar10 images are 32x32x3");
    if (dataset.train_per_class < 1 || dataset.query_per_class < 1 ||
        dataset.gallery_per_class < 0)
      fail("[dataset] split sizes must be positive");
  } else {
    if (dataset.n_classes < 2) fail("[dataset] n_classes must be >= 2");
    if (dataset.train_per_class < 2 || dataset.query_per_class < 2 ||
        dataset.gallery_per_class < 2)
      fail("[dataset] per-class split sizes must be >= 2");
    if (!(dataset.noise >= 0.0)) fail("[dataset] noise must be >= 0");
  }
  if (dataset.shape.height < 1 || dataset.shape.width < 1 || dataset.shape.channels < 1)
    fail("[dataset] image shape must be positive");
  if (eval.cutoff < 1) fail("[eval] cutoff must be >= 1");
  if (eval.ns.empty()) fail("[eval] ns must not be empty");
  for (int n : eval.ns)
    if (n < 1) fail("[eval] ns entries must be >= 1");
  if (output_dir.empty()) fail("[output] dir must not be empty");
  train.validate();
  try {
    std::mt19937_64 rng(0);
    AttentionNet<float>(train.attention_config(dataset.shape), rng);
    HashNet<float>(train.hash_config(dataset.shape), rng);
  } catch (const InvalidInput& e) {
    fail(std::string("model does not fit the image shape: ") + e.what());
  }
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  ExperimentConfig config;
  for (const auto& [section, entries] : tree) {
    if (!entries.data().empty())
      throw ConfigError(source + ": key '" + section + "' outside a section");
    for (const auto& [name, value] : entries)
      set_key(config, find_key(section, name), value.data());
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  auto config = parse_config(text.str(), path.string());
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) config.output_dir = env;
  return config;
}

namespace {

const Key& find_dotted(const std::string& dotted_key) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos) throw ConfigError("key must be section.key: " + dotted_key);
  return find_key(dotted_key.substr(0, dot), dotted_key.substr(dot + 1));
}

}  // namespace

void apply_override(ExperimentConfig& config, const std::string& dotted_key,
                    const std::string& value) {
  set_key(config, find_dotted(dotted_key), value);
}

std::string config_value(const ExperimentConfig& config, const std::string& dotted_key) {
  return find_dotted(dotted_key).get(config);
}

std::string to_ini(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& k : keys()) {
    if (k.section != section) {
      out += (section.empty() ? "[" : "\n[") + k.section + "]\n";
      section = k.section;
    }
    out += k.name + " = " + k.get(config) + "\n";
  }
  return out;
}

nlohmann::json to_json(const ExperimentConfig& config) {
  nlohmann::json j;
  for (const auto& k : keys()) j[k.section][k.name] = k.get(config);
  j["train_config"] = to_json(config.train);
  return j;
}

ExperimentData load_experiment_data(const DatasetConfig& config) {
  if (config.kind == "cifar10") {
    Cifar10SplitSpec spec;
    spec.train_per_class = config.train_per_class;
    spec.query_per_class = config.query_per_class;
    spec.gallery_per_class = config.gallery_per_class;
    spec.seed = config.seed;
    auto splits = load_cifar10(config.path, spec);
    return {std::move(splits.train), std::move(splits.query), std::move(splits.gallery)};
  }
  const auto seed = config.seed * 3;
  return {generate_synthetic(config.n_classes, config.train_per_class, config.shape, config.noise,
                             seed, Split::train),
          generate_synthetic(config.n_classes, config.query_per_class, config.shape, config.noise,
                             seed + 1, Split::query),
          generate_synthetic(config.n_classes, config.gallery_per_class, config.shape,
                             config.noise, seed + 2, Split::gallery)};
}

}  // namespace dagh
