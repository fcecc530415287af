#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dagh/datasets.hpp"
#include "dagh/nn.hpp"

namespace dagh {

/// Per-pixel saliency, H x W. Row-major so that data() is in pixel order.
template <typename Scalar>
using AttentionMap = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct AttentionConfig {
  ImageShape input;
  /// Encoder widths, one per downsampling level (>= 2 levels).
  std::vector<int> widths{8, 16, 16};
  int kernel = 3;
};

template <typename Scalar>
nn::FeatureMap<Scalar> to_feature_map(const ImageData& pixels, const ImageShape& shape) {
  return {pixels.cast<Scalar>(), shape.height, shape.width};
}

/// Encoder-decoder attention network: `levels` blocks of conv + SiLU + 2x2
/// average pooling, the same number of upsample + conv blocks back to full
/// resolution, and one skip connection adding the mid-resolution encoder
/// map to the first decoder output. The last conv has a single output
/// channel and no activation.
template <typename Scalar>
class AttentionNet {
 public:
  using Mat = nn::Mat<Scalar>;

  struct Cache {
    std::vector<Mat> enc_cols, enc_pre, dec_cols, dec_pre;
    std::vector<nn::FeatureMap<Scalar>> enc_out;
    int height = 0, width = 0;
  };

  AttentionNet() = default;

  AttentionNet(AttentionConfig config, std::mt19937_64& rng) : config_(std::move(config)) {
    validate();
    const auto levels = config_.widths.size();
    const int k2 = config_.kernel * config_.kernel;
    int in = config_.input.channels;
    for (std::size_t i = 0; i < levels; ++i) {
      const int out = config_.widths[i];
      enc_w_.push_back(params_.add("enc" + std::to_string(i) + ".weight",
                                   nn::fan_in_normal<Scalar>(out, in * k2, rng)));
      enc_b_.push_back(params_.add("enc" + std::to_string(i) + ".bias", Mat::Zero(out, 1)));
      in = out;
    }
    // decoder block j runs at level j, walking back up from the deepest level
    dec_w_.resize(levels);
    dec_b_.resize(levels);
    for (std::size_t jj = levels; jj-- > 0;) {
      const int cin = config_.widths[jj];
      const int cout = jj > 0 ? config_.widths[jj - 1] : 1;
      dec_w_[jj] = params_.add("dec" + std::to_string(jj) + ".weight",
                               nn::fan_in_normal<Scalar>(cout, cin * k2, rng));
      dec_b_[jj] = params_.add("dec" + std::to_string(jj) + ".bias", Mat::Zero(cout, 1));
    }
  }

  const AttentionConfig& config() const { return config_; }
  nn::ParamSet<Scalar>& params() { return params_; }
  const nn::ParamSet<Scalar>& params() const { return params_; }

  /// Preliminary (unnormalised) attention map, 1 x (H*W) in pixel order.
  nn::FeatureMap<Scalar> forward(const nn::FeatureMap<Scalar>& image, Cache& cache) const {
    check_input(image);
    const auto levels = config_.widths.size();
    const int k = config_.kernel;
    cache.enc_cols.assign(levels, {});
    cache.enc_pre.assign(levels, {});
    cache.enc_out.assign(levels, {});
    cache.dec_cols.assign(levels, {});
    cache.dec_pre.assign(levels, {});
    cache.height = image.height;
    cache.width = image.width;

    const nn::FeatureMap<Scalar>* x = &image;
    for (std::size_t i = 0; i < levels; ++i) {
      auto a = nn::conv_forward(params_.value(enc_w_[i]), params_.value(enc_b_[i]), *x, k,
                                cache.enc_cols[i]);
      cache.enc_pre[i] = a.data;
      a.data = nn::silu(a.data);
      cache.enc_out[i] = nn::avg_pool2(a);
      x = &cache.enc_out[i];
    }
    nn::FeatureMap<Scalar> d = cache.enc_out[levels - 1];
    for (std::size_t jj = levels; jj-- > 0;) {
      auto a = nn::conv_forward(params_.value(dec_w_[jj]), params_.value(dec_b_[jj]),
                                nn::upsample2(d), k, cache.dec_cols[jj]);
      if (jj == 0) return a;
      cache.dec_pre[jj] = a.data;
      a.data = nn::silu(a.data);
      if (jj == levels - 1) a.data += cache.enc_out[levels - 2].data;
      d = std::move(a);
    }
    return d;  // unreachable: levels >= 2
  }

  nn::FeatureMap<Scalar> forward(const nn::FeatureMap<Scalar>& image) const {
    Cache cache;
    return forward(image, cache);
  }

  /// Accumulates parameter gradients for upstream gradient `dmap` (1 x H*W)
  /// and returns the gradient w.r.t. the input image.
  nn::FeatureMap<Scalar> backward(const Cache& cache, const nn::FeatureMap<Scalar>& dmap,
                                  nn::Grads<Scalar>& grads, bool need_input_grad = true) const {
    const auto levels = config_.widths.size();
    const int k = config_.kernel;
    nn::FeatureMap<Scalar> g = dmap;
    nn::FeatureMap<Scalar> skip;
    for (std::size_t jj = 0; jj < levels; ++jj) {
      if (jj > 0) {
        if (jj == levels - 1) skip = g;
        g.data = nn::silu_backward(cache.dec_pre[jj], g.data);
      }
      auto du = nn::conv_backward(params_.value(dec_w_[jj]), cache.dec_cols[jj], g, k,
                                  grads[dec_w_[jj]], grads[dec_b_[jj]]);
      g = nn::upsample2_backward(du);
    }
    for (std::size_t i = levels; i-- > 0;) {
      if (i == levels - 2) g.data += skip.data;
      auto ds = nn::avg_pool2_backward(g);
      ds.data = nn::silu_backward(cache.enc_pre[i], ds.data);
      g = nn::conv_backward(params_.value(enc_w_[i]), cache.enc_cols[i], ds, k,
                            grads[enc_w_[i]], grads[enc_b_[i]], i > 0 || need_input_grad);
    }
    return g;
  }

  /// Index of the single-channel output conv weight (zeroing it yields a
  /// constant map equal to its bias).
  std::size_t output_weight_index() const { return dec_w_[0]; }
  std::size_t output_bias_index() const { return dec_b_[0]; }

  template <typename Other>
  AttentionNet<Other> cast() const {
    AttentionNet<Other> out;
    out.config_ = config_;
    out.params_ = params_.template cast<Other>();
    out.enc_w_ = enc_w_;
    out.enc_b_ = enc_b_;
    out.dec_w_ = dec_w_;
    out.dec_b_ = dec_b_;
    return out;
  }

 private:
  template <typename>
  friend class AttentionNet;

  void validate() const {
    const auto levels = config_.widths.size();
    if (levels < 2) throw InvalidInput("attention network needs at least 2 levels");
    if (config_.kernel < 1 || config_.kernel % 2 == 0)
      throw InvalidInput("attention kernel size must be odd and positive");
    const int div = 1 << levels;
    if (config_.input.height % div != 0 || config_.input.width % div != 0)
      throw InvalidInput("attention input " + std::to_string(config_.input.height) + "x" +
                         std::to_string(config_.input.width) + " not divisible by " +
                         std::to_string(div));
    for (int w : config_.widths)
      if (w < 1) throw InvalidInput("attention widths must be positive");
  }

  void check_input(const nn::FeatureMap<Scalar>& image) const {
    if (image.height != config_.input.height || image.width != config_.input.width ||
        image.channels() != config_.input.channels)
      throw InvalidInput("attention_forward: image " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + "x" + std::to_string(image.channels()) +
                         " does not match configured input " +
                         std::to_string(config_.input.height) + "x" +
                         std::to_string(config_.input.width) + "x" +
                         std::to_string(config_.input.channels));
  }

  AttentionConfig config_;
  nn::ParamSet<Scalar> params_;
  std::vector<std::size_t> enc_w_, enc_b_, dec_w_, dec_b_;
};

/// Reshapes a single-channel feature map into an H x W attention map.
template <typename Scalar>
AttentionMap<Scalar> as_map(const nn::FeatureMap<Scalar>& fm) {
  if (fm.channels() != 1) throw InvalidInput("attention map must have a single channel");
  return Eigen::Map<const AttentionMap<Scalar>>(fm.data.data(), fm.height, fm.width);
}

template <typename Scalar>
nn::FeatureMap<Scalar> as_feature_map(const AttentionMap<Scalar>& map) {
  return {Eigen::Map<const nn::Mat<Scalar>>(map.data(), 1, map.size()),
          static_cast<int>(map.rows()), static_cast<int>(map.cols())};
}

/// Min-max rescaling to [0, 1]. A constant map becomes all 0.5.
template <typename Derived>
AttentionMap<typename Derived::Scalar> normalize_map(const Eigen::MatrixBase<Derived>& map) {
  using Scalar = typename Derived::Scalar;
  const Scalar lo = map.minCoeff();
  const Scalar hi = map.maxCoeff();
  if (!(hi > lo)) return AttentionMap<Scalar>::Constant(map.rows(), map.cols(), Scalar(0.5));
  return ((map.array() - lo) / (hi - lo)).matrix();
}

/// Gradient of normalize_map w.r.t. its input. The min and max pixels pick
/// up the extra terms from the moving endpoints.
template <typename Scalar>
AttentionMap<Scalar> normalize_map_backward(const AttentionMap<Scalar>& map,
                                            const AttentionMap<Scalar>& dout) {
  Eigen::Index rmin, cmin, rmax, cmax;
  const Scalar lo = map.minCoeff(&rmin, &cmin);
  const Scalar hi = map.maxCoeff(&rmax, &cmax);
  if (!(hi > lo)) return AttentionMap<Scalar>::Zero(map.rows(), map.cols());
  const Scalar range = hi - lo;
  AttentionMap<Scalar> dx = dout / range;
  const Scalar r2 = range * range;
  dx(rmin, cmin) += (dout.array() * (map.array() - hi)).sum() / r2;
  dx(rmax, cmax) -= (dout.array() * (map.array() - lo)).sum() / r2;
  return dx;
}

/// Hadamard product of a planar image (channels x H*W) with a single-channel
/// map broadcast across channels.
template <typename ImageDerived, typename MapDerived>
nn::Mat<typename ImageDerived::Scalar> apply_attention(const Eigen::MatrixBase<ImageDerived>& image,
                                                       const Eigen::MatrixBase<MapDerived>& map) {
  using Scalar = typename ImageDerived::Scalar;
  if (image.cols() != map.size())
    throw InvalidInput("apply_attention: image has " + std::to_string(image.cols()) +
                       " pixels, map has " + std::to_string(map.size()));
  const AttentionMap<Scalar> m = map.template cast<Scalar>();
  const Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> row(m.data(), m.size());
  return (image.array().rowwise() * row.array()).matrix();
}

/// Gradient of apply_attention w.r.t. the map.
template <typename Scalar>
AttentionMap<Scalar> apply_attention_backward_map(const nn::Mat<Scalar>& image,
                                                  const nn::Mat<Scalar>& dout, int height,
                                                  int width) {
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> g = (image.array() * dout.array()).colwise().sum();
  return Eigen::Map<const AttentionMap<Scalar>>(g.data(), height, width);
}

}  // namespace dagh
