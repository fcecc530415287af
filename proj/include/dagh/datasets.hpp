#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dagh {

using LabelSet = std::set<int>;

/// Planar image storage: one row per channel, one column per pixel
/// (pixel index = row * width + col). Values in [0, 1].
using ImageData = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>;

struct ImageShape {
  int height = 0;
  int width = 0;
  int channels = 0;

  int pixels() const { return height * width; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

struct ImageSample {
  std::int64_t id = 0;
  ImageData pixels;
  LabelSet labels;
};

enum class Split { train, query, gallery };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

/// Immutable collection of equally shaped, labelled images with ids 0..n-1.
class Dataset {
 public:
  Dataset() = default;
  /// Validates the invariants (shape, value range, non-empty labels) and
  /// renumbers ids contiguously from 0.
  Dataset(std::vector<ImageSample> samples, Split split, ImageShape shape);

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const ImageSample& operator[](std::size_t i) const { return samples_[i]; }
  const std::vector<ImageSample>& samples() const { return samples_; }
  Split split() const { return split_; }
  const ImageShape& image_shape() const { return shape_; }

  std::vector<LabelSet> labels() const;
  /// Number of distinct label values.
  std::size_t num_classes() const;

 private:
  std::vector<ImageSample> samples_;
  Split split_ = Split::train;
  ImageShape shape_;
};

/// 1 if the label sets share at least one label, else 0.
int pairwise_label(const LabelSet& a, const LabelSet& b);

/// Noisy backgrounds with one class-specific salient patch per image
/// (shape, colour and position depend on the class) plus a random
/// distractor blob. Deterministic for a fixed seed.
Dataset generate_synthetic(int n_classes, int per_class, ImageShape shape, double noise_level,
                           std::uint64_t seed, Split split = Split::train);

struct Cifar10SplitSpec {
  int train_per_class = 500;
  int query_per_class = 100;
  /// 0 keeps every remaining image in the gallery.
  int gallery_per_class = 0;
  std::uint64_t seed = 0;
};

struct Cifar10Splits {
  Dataset train;
  Dataset query;
  Dataset gallery;
};

/// Reads data_batch_{1..5}.bin and test_batch.bin (whichever exist, at
/// least one required) and draws per-class splits with a seeded shuffle.
Cifar10Splits load_cifar10(const std::filesystem::path& dir, const Cifar10SplitSpec& spec);

/// Directory format: manifest.json (split, image_shape, labels) plus
/// pixels.f32 holding n*H*W*C little-endian float32 values, planar per image.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Labels from a dataset manifest.json (or a dataset directory).
std::vector<LabelSet> load_labels(const std::filesystem::path& path);

/// Symmetric {0,1} similarity with unit diagonal.
using SimilarityMatrix = Eigen::MatrixXd;

struct PairBatch {
  std::vector<std::size_t> ids;
  SimilarityMatrix sim;
};

SimilarityMatrix similarity_matrix(const std::vector<LabelSet>& labels);

/// Seeded per-epoch permutation of a dataset, chunked into batches. A short
/// trailing batch is kept when it holds at least two samples.
class PairBatchStream {
 public:
  PairBatchStream(const Dataset& dataset, int batch_size, std::uint64_t seed);

  std::vector<PairBatch> epoch(int index) const;

 private:
  const Dataset* dataset_;
  int batch_size_;
  std::uint64_t seed_;
};

/// Seeded permutation of 0..n-1 for (seed, stream, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t stream,
                                           int epoch);

/// Chunks a permutation into batches; drops a trailing batch smaller than min_last.
std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, int batch_size,
                                            int min_last);

}  // namespace dagh
