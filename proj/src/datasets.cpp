#include "dagh/datasets.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "dagh/errors.hpp"

namespace dagh {

namespace fs = std::filesystem;

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::query:
      return "query";
    case Split::gallery:
      return "gallery";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "query") return Split::query;
  if (name == "gallery") return Split::gallery;
  throw InvalidInput("unknown split '" + name + "'");
}

Dataset::Dataset(std::vector<ImageSample> samples, Split split, ImageShape shape)
    : samples_(std::move(samples)), split_(split), shape_(shape) {
  if (shape_.height <= 0 || shape_.width <= 0 || shape_.channels <= 0)
    throw InvalidInput("dataset image shape must be positive");
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    auto& s = samples_[i];
    s.id = static_cast<std::int64_t>(i);
    if (s.pixels.rows() != shape_.channels || s.pixels.cols() != shape_.pixels())
      throw InvalidInput("sample " + std::to_string(i) + " does not match dataset image shape");
    if (s.labels.empty()) throw InvalidInput("sample " + std::to_string(i) + " has no labels");
    if (!s.pixels.allFinite() || s.pixels.minCoeff() < 0.0f || s.pixels.maxCoeff() > 1.0f)
      throw InvalidInput("sample " + std::to_string(i) + " has pixel values outside [0,1]");
  }
}

std::vector<LabelSet> Dataset::labels() const {
  std::vector<LabelSet> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.labels);
  return out;
}

std::size_t Dataset::num_classes() const {
  LabelSet all;
  for (const auto& s : samples_) all.insert(s.labels.begin(), s.labels.end());
  return all.size();
}

int pairwise_label(const LabelSet& a, const LabelSet& b) {
  if (a.empty() || b.empty()) throw InvalidInput("pairwise_label: empty label set");
  // both sets are sorted, so a merge-style scan finds any shared label
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia == *ib) return 1;
    if (*ia < *ib)
      ++ia;
    else
      ++ib;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// synthetic data

namespace {

enum class PatchShape { square, cross, disk, bar };

struct ClassPattern {
  PatchShape shape;
  double row;  // patch centre, fraction of height
  double col;
  std::array<float, 3> colour;
};

ClassPattern class_pattern(int cls, int n_classes) {
  static constexpr std::array<PatchShape, 4> kShapes = {PatchShape::square, PatchShape::cross,
                                                        PatchShape::disk, PatchShape::bar};
  // centres on a ring so every class gets its own location
  const double angle = 2.0 * M_PI * cls / n_classes;
  ClassPattern p;
  p.shape = kShapes[static_cast<std::size_t>(cls) % kShapes.size()];
  p.row = 0.5 + 0.25 * std::sin(angle);
  p.col = 0.5 + 0.25 * std::cos(angle);
  const double hue = static_cast<double>(cls) / n_classes;
  for (int ch = 0; ch < 3; ++ch) {
    p.colour[static_cast<std::size_t>(ch)] =
        static_cast<float>(0.55 + 0.45 * std::cos(2.0 * M_PI * (hue + ch / 3.0)));
  }
  return p;
}

bool inside(PatchShape shape, int dr, int dc, int radius) {
  switch (shape) {
    case PatchShape::square:
      return std::abs(dr) <= radius && std::abs(dc) <= radius;
    case PatchShape::cross:
      return (std::abs(dr) <= radius / 3 && std::abs(dc) <= radius) ||
             (std::abs(dc) <= radius / 3 && std::abs(dr) <= radius);
    case PatchShape::disk:
      return dr * dr + dc * dc <= radius * radius;
    case PatchShape::bar:
      return std::abs(dr - dc) <= 1 && std::abs(dr) <= radius;
  }
  return false;
}

}  // namespace

Dataset generate_synthetic(int n_classes, int per_class, ImageShape shape, double noise_level,
                           std::uint64_t seed, Split split) {
  if (n_classes < 2) throw InvalidInput("generate_synthetic: n_classes must be >= 2");
  if (per_class < 2) throw InvalidInput("generate_synthetic: per_class must be >= 2");
  if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0)
    throw InvalidInput("generate_synthetic: image shape must be positive");
  if (!(noise_level >= 0.0)) throw InvalidInput("generate_synthetic: noise_level must be >= 0");

  std::seed_seq seq{seed, std::uint64_t{0x5e7}};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int h = shape.height;
  const int w = shape.width;
  const int radius = std::max(1, std::min(h, w) / 8);
  const int jitter = std::max(1, std::min(h, w) / 16);

  std::vector<ImageSample> samples;
  samples.reserve(static_cast<std::size_t>(n_classes) * per_class);
  for (int cls = 0; cls < n_classes; ++cls) {
    const ClassPattern pattern = class_pattern(cls, n_classes);
    for (int i = 0; i < per_class; ++i) {
      ImageSample s;
      s.labels = {cls};
      s.pixels.resize(shape.channels, shape.pixels());

      const double base = 0.15 + 0.25 * unit(rng);
      for (Eigen::Index p = 0; p < s.pixels.cols(); ++p)
        for (Eigen::Index ch = 0; ch < s.pixels.rows(); ++ch)
          s.pixels(ch, p) = static_cast<float>(base + 0.1 * unit(rng));

      // distractor: random rectangle of random colour anywhere in the image
      const int dr0 = static_cast<int>(unit(rng) * h);
      const int dc0 = static_cast<int>(unit(rng) * w);
      const int dh = 1 + static_cast<int>(unit(rng) * radius);
      const int dw = 1 + static_cast<int>(unit(rng) * radius);
      std::vector<float> distractor(static_cast<std::size_t>(shape.channels));
      for (auto& v : distractor) v = static_cast<float>(0.3 + 0.5 * unit(rng));
      for (int r = dr0; r < std::min(h, dr0 + dh); ++r)
        for (int c = dc0; c < std::min(w, dc0 + dw); ++c)
          for (int ch = 0; ch < shape.channels; ++ch)
            s.pixels(ch, r * w + c) = distractor[static_cast<std::size_t>(ch)];

      const int cr = static_cast<int>(std::lround(pattern.row * (h - 1))) +
                     static_cast<int>(std::lround((2.0 * unit(rng) - 1.0) * jitter));
      const int cc = static_cast<int>(std::lround(pattern.col * (w - 1))) +
                     static_cast<int>(std::lround((2.0 * unit(rng) - 1.0) * jitter));
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
          if (inside(pattern.shape, r - cr, c - cc, radius))
            for (int ch = 0; ch < shape.channels; ++ch)
              s.pixels(ch, r * w + c) = pattern.colour[static_cast<std::size_t>(ch % 3)];

      for (Eigen::Index p = 0; p < s.pixels.cols(); ++p)
        for (Eigen::Index ch = 0; ch < s.pixels.rows(); ++ch) {
          const double v = s.pixels(ch, p) + noise_level * 0.5 * gauss(rng);
          s.pixels(ch, p) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      samples.push_back(std::move(s));
    }
  }
  return Dataset(std::move(samples), split, shape);
}

// ---------------------------------------------------------------------------
// CIFAR-10

namespace {

constexpr std::size_t kCifarRecord = 3073;
constexpr int kCifarSide = 32;

void read_cifar_file(const fs::path& path, std::vector<ImageSample>& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecord != 0)
    throw IoError("corrupt CIFAR-10 file " + path.string() + ": size " +
                  std::to_string(bytes.size()) + " is not a multiple of 3073");
  const std::size_t n = bytes.size() / kCifarRecord;
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] > 9)
      throw IoError("corrupt CIFAR-10 file " + path.string() + ": label " +
                    std::to_string(rec[0]) + " in record " + std::to_string(r));
    ImageSample s;
    s.labels = {static_cast<int>(rec[0])};
    s.pixels.resize(3, kCifarSide * kCifarSide);
    for (int ch = 0; ch < 3; ++ch)
      for (int p = 0; p < kCifarSide * kCifarSide; ++p)
        s.pixels(ch, p) = static_cast<float>(rec[1 + ch * kCifarSide * kCifarSide + p]) / 255.0f;
    out.push_back(std::move(s));
  }
}

}  // namespace

Cifar10Splits load_cifar10(const fs::path& dir, const Cifar10SplitSpec& spec) {
  if (!fs::is_directory(dir)) throw IoError("CIFAR-10 directory not found: " + dir.string());
  if (spec.train_per_class < 0 || spec.query_per_class < 0 || spec.gallery_per_class < 0)
    throw InvalidInput("CIFAR-10 split sizes must be non-negative");

  std::vector<ImageSample> all;
  bool any = false;
  for (const char* name : {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                           "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"}) {
    const fs::path path = dir / name;
    if (!fs::exists(path)) continue;
    any = true;
    read_cifar_file(path, all);
  }
  if (!any) throw IoError("no CIFAR-10 batch files (data_batch_*.bin, test_batch.bin) in " +
                          dir.string());

  std::vector<std::vector<std::size_t>> by_class(10);
  for (std::size_t i = 0; i < all.size(); ++i)
    by_class[static_cast<std::size_t>(*all[i].labels.begin())].push_back(i);

  std::seed_seq seq{spec.seed, std::uint64_t{0xc1fa}};
  std::mt19937_64 rng(seq);
  std::vector<ImageSample> train, query, gallery;
  for (std::size_t cls = 0; cls < by_class.size(); ++cls) {
    auto& idx = by_class[cls];
    if (idx.empty()) continue;
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto need = static_cast<std::size_t>(spec.train_per_class + spec.query_per_class);
    if (idx.size() < need)
      throw InvalidInput("CIFAR-10 class " + std::to_string(cls) + " has " +
                         std::to_string(idx.size()) + " images, split needs " +
                         std::to_string(need));
    std::size_t k = 0;
    for (int i = 0; i < spec.train_per_class; ++i) train.push_back(all[idx[k++]]);
    for (int i = 0; i < spec.query_per_class; ++i) query.push_back(all[idx[k++]]);
    const std::size_t rest = idx.size() - k;
    const std::size_t take = spec.gallery_per_class > 0
                                 ? std::min(rest, static_cast<std::size_t>(spec.gallery_per_class))
                                 : rest;
    for (std::size_t i = 0; i < take; ++i) gallery.push_back(std::move(all[idx[k++]]));
  }
  const ImageShape shape{kCifarSide, kCifarSide, 3};
  return {Dataset(std::move(train), Split::train, shape),
          Dataset(std::move(query), Split::query, shape),
          Dataset(std::move(gallery), Split::gallery, shape)};
}

// ---------------------------------------------------------------------------
// on-disk dataset

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& shape = dataset.image_shape();
  nlohmann::json manifest;
  manifest["format"] = "dagh-dataset";
  manifest["version"] = 1;
  manifest["split"] = to_string(dataset.split());
  manifest["image_shape"] = {shape.height, shape.width, shape.channels};
  manifest["count"] = dataset.size();
  manifest["pixels"] = "pixels.f32";
  auto& labels = manifest["labels"] = nlohmann::json::array();
  for (const auto& s : dataset.samples()) labels.push_back(s.labels);

  std::ofstream pix(dir / "pixels.f32", std::ios::binary);
  if (!pix) throw IoError("cannot write " + (dir / "pixels.f32").string());
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  for (const auto& s : dataset.samples())
    pix.write(reinterpret_cast<const char*>(s.pixels.data()),
              static_cast<std::streamsize>(s.pixels.size() * sizeof(float)));
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::vector<LabelSet> parse_labels(const nlohmann::json& j, const fs::path& path) {
  if (!j.contains("labels") || !j["labels"].is_array())
    throw IoError(path.string() + " has no \"labels\" array");
  std::vector<LabelSet> out;
  for (const auto& entry : j["labels"]) {
    LabelSet s;
    if (entry.is_number_integer())
      s.insert(entry.get<int>());
    else
      for (const auto& v : entry) s.insert(v.get<int>());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::vector<LabelSet> load_labels(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "manifest.json" : path;
  return parse_labels(read_json(file), file);
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  const auto manifest = read_json(mpath);
  ImageShape shape;
  std::vector<LabelSet> labels;
  Split split;
  try {
    const auto& dims = manifest.at("image_shape");
    shape = {dims.at(0).get<int>(), dims.at(1).get<int>(), dims.at(2).get<int>()};
    split = split_from_string(manifest.value("split", std::string("train")));
    labels = parse_labels(manifest, mpath);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset manifest " + mpath.string() + ": " + e.what());
  }
  const fs::path ppath = dir / manifest.value("pixels", std::string("pixels.f32"));
  std::ifstream pix(ppath, std::ios::binary);
  if (!pix) throw IoError("cannot open " + ppath.string());
  const auto per_image = static_cast<std::size_t>(shape.channels) * shape.pixels();
  if (fs::file_size(ppath) != labels.size() * per_image * sizeof(float))
    throw IoError("pixel file " + ppath.string() + " size does not match manifest");

  std::vector<ImageSample> samples(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    samples[i].labels = std::move(labels[i]);
    samples[i].pixels.resize(shape.channels, shape.pixels());
    pix.read(reinterpret_cast<char*>(samples[i].pixels.data()),
             static_cast<std::streamsize>(per_image * sizeof(float)));
  }
  try {
    return Dataset(std::move(samples), split, shape);
  } catch (const InvalidInput& e) {
    throw IoError(dir.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// batching

SimilarityMatrix similarity_matrix(const std::vector<LabelSet>& labels) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  SimilarityMatrix sim(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    sim(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j)
      sim(i, j) = sim(j, i) = pairwise_label(labels[static_cast<std::size_t>(i)],
                                             labels[static_cast<std::size_t>(j)]);
  }
  return sim;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t stream,
                                           int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::seed_seq seq{seed, stream, static_cast<std::uint64_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, int batch_size,
                                            int min_last) {
  std::vector<std::vector<std::size_t>> out;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    if (end - start < static_cast<std::size_t>(min_last)) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

PairBatchStream::PairBatchStream(const Dataset& dataset, int batch_size, std::uint64_t seed)
    : dataset_(&dataset), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 2) throw InvalidInput("pair_batches: batch_size must be >= 2");
}

std::vector<PairBatch> PairBatchStream::epoch(int index) const {
  std::vector<PairBatch> out;
  for (auto& ids : chunk(epoch_permutation(dataset_->size(), seed_, 1, index), batch_size_, 2)) {
    std::vector<LabelSet> labels;
    labels.reserve(ids.size());
    for (auto id : ids) labels.push_back((*dataset_)[id].labels);
    out.push_back({std::move(ids), similarity_matrix(labels)});
  }
  return out;
}

}  // namespace dagh
