#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dagh/attention.hpp"
#include "dagh/nn.hpp"

namespace dagh {

template <typename Scalar>
using ContinuousCode = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
/// Entries in {-1, +1}.
using BinaryCode = Eigen::Matrix<std::int8_t, Eigen::Dynamic, 1>;
/// One {-1, +1} code per row.
using CodeMatrix = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// One {0, 1} target per entry, one image per row.
using BitMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct HashNetConfig {
  ImageShape input;
  /// conv + SiLU + 2x2 average pool blocks
  std::vector<int> conv_channels{16, 32, 32};
  /// fully connected SiLU layers between the backbone and the hashing layer
  std::vector<int> hidden{64};
  int code_length = 16;
  int kernel = 3;
  double fch_lr_multiplier = 10.0;
  double fch_init_std = 0.3;
  /// subtracted from every input value before the first conv
  double input_center = 0.0;
};

/// Backbone CNN + hidden FC layers + K-unit linear hashing layer (fch).
template <typename Scalar>
class HashNet {
 public:
  using Mat = nn::Mat<Scalar>;
  using Vec = nn::Vec<Scalar>;

  struct Cache {
    std::vector<Mat> conv_cols, conv_pre;
    std::vector<nn::FeatureMap<Scalar>> conv_out;
    std::vector<Vec> fc_in, fc_pre;
    Vec fch_in;
  };

  HashNet() = default;

  HashNet(HashNetConfig config, std::mt19937_64& rng) : config_(std::move(config)) {
    validate();
    const int k2 = config_.kernel * config_.kernel;
    int in = config_.input.channels;
    for (std::size_t i = 0; i < config_.conv_channels.size(); ++i) {
      const int out = config_.conv_channels[i];
      conv_w_.push_back(params_.add("conv" + std::to_string(i) + ".weight",
                                    nn::fan_in_normal<Scalar>(out, in * k2, rng)));
      conv_b_.push_back(params_.add("conv" + std::to_string(i) + ".bias", Mat::Zero(out, 1)));
      in = out;
    }
    int features = feature_size();
    for (std::size_t i = 0; i < config_.hidden.size(); ++i) {
      const int out = config_.hidden[i];
      fc_w_.push_back(params_.add("fc" + std::to_string(i) + ".weight",
                                  nn::fan_in_normal<Scalar>(out, features, rng)));
      fc_b_.push_back(params_.add("fc" + std::to_string(i) + ".bias", Mat::Zero(out, 1)));
      features = out;
    }
    const auto mult = static_cast<Scalar>(config_.fch_lr_multiplier);
    fch_w_ = params_.add("fch.weight",
                         nn::random_normal<Scalar>(config_.code_length, features,
                                                   config_.fch_init_std, rng),
                         mult);
    fch_b_ = params_.add("fch.bias", Mat::Zero(config_.code_length, 1), mult);
  }

  const HashNetConfig& config() const { return config_; }
  int code_length() const { return config_.code_length; }
  nn::ParamSet<Scalar>& params() { return params_; }
  const nn::ParamSet<Scalar>& params() const { return params_; }
  std::size_t fch_weight_index() const { return fch_w_; }
  std::size_t fch_bias_index() const { return fch_b_; }

  /// Raw fch output (pre-activation continuous code).
  Vec forward(const nn::FeatureMap<Scalar>& image, Cache& cache) const {
    check_input(image);
    const int k = config_.kernel;
    const auto blocks = conv_w_.size();
    cache.conv_cols.assign(blocks, {});
    cache.conv_pre.assign(blocks, {});
    cache.conv_out.assign(blocks, {});
    const nn::FeatureMap<Scalar> centered{image.data.array() - static_cast<Scalar>(config_.input_center),
                                          image.height, image.width};
    const nn::FeatureMap<Scalar>* x = &centered;
    for (std::size_t i = 0; i < blocks; ++i) {
      auto a = nn::conv_forward(params_.value(conv_w_[i]), params_.value(conv_b_[i]), *x, k,
                                cache.conv_cols[i]);
      cache.conv_pre[i] = a.data;
      a.data = nn::silu(a.data);
      cache.conv_out[i] = nn::avg_pool2(a);
      x = &cache.conv_out[i];
    }
    Vec h = Eigen::Map<const Vec>(x->data.data(), x->data.size());
    cache.fc_in.assign(fc_w_.size(), {});
    cache.fc_pre.assign(fc_w_.size(), {});
    for (std::size_t i = 0; i < fc_w_.size(); ++i) {
      cache.fc_in[i] = h;
      cache.fc_pre[i] = params_.value(fc_w_[i]) * h + params_.value(fc_b_[i]).col(0);
      h = nn::silu<Scalar>(cache.fc_pre[i]);
    }
    cache.fch_in = h;
    return params_.value(fch_w_) * h + params_.value(fch_b_).col(0);
  }

  Vec forward(const nn::FeatureMap<Scalar>& image) const {
    Cache cache;
    return forward(image, cache);
  }

  /// Accumulates parameter gradients for upstream gradient `dcode` and
  /// returns the gradient w.r.t. the input image.
  nn::FeatureMap<Scalar> backward(const Cache& cache, const Vec& dcode, nn::Grads<Scalar>& grads,
                                  bool need_input_grad = true) const {
    grads[fch_w_].noalias() += dcode * cache.fch_in.transpose();
    grads[fch_b_].col(0) += dcode;
    Vec g = params_.value(fch_w_).transpose() * dcode;
    for (std::size_t i = fc_w_.size(); i-- > 0;) {
      g = nn::silu_backward<Scalar>(cache.fc_pre[i], g);
      grads[fc_w_[i]].noalias() += g * cache.fc_in[i].transpose();
      grads[fc_b_[i]].col(0) += g;
      g = params_.value(fc_w_[i]).transpose() * g;
    }
    const auto& last = cache.conv_out.back();
    nn::FeatureMap<Scalar> dx{Eigen::Map<const Mat>(g.data(), last.channels(),
                                                    static_cast<Eigen::Index>(last.height) *
                                                        last.width),
                              last.height, last.width};
    const int k = config_.kernel;
    for (std::size_t i = conv_w_.size(); i-- > 0;) {
      auto ds = nn::avg_pool2_backward(dx);
      ds.data = nn::silu_backward(cache.conv_pre[i], ds.data);
      dx = nn::conv_backward(params_.value(conv_w_[i]), cache.conv_cols[i], ds, k,
                             grads[conv_w_[i]], grads[conv_b_[i]], i > 0 || need_input_grad);
    }
    return dx;
  }

  template <typename Other>
  HashNet<Other> cast() const {
    HashNet<Other> out;
    out.config_ = config_;
    out.params_ = params_.template cast<Other>();
    out.conv_w_ = conv_w_;
    out.conv_b_ = conv_b_;
    out.fc_w_ = fc_w_;
    out.fc_b_ = fc_b_;
    out.fch_w_ = fch_w_;
    out.fch_b_ = fch_b_;
    return out;
  }

 private:
  template <typename>
  friend class HashNet;

  int feature_size() const {
    const int div = 1 << config_.conv_channels.size();
    return config_.conv_channels.back() * (config_.input.height / div) *
           (config_.input.width / div);
  }

  void validate() const {
    if (config_.code_length < 1) throw InvalidInput("code length K must be >= 1");
    if (config_.conv_channels.empty()) throw InvalidInput("hash backbone needs >= 1 conv block");
    if (config_.kernel < 1 || config_.kernel % 2 == 0)
      throw InvalidInput("hash kernel size must be odd and positive");
    const int div = 1 << config_.conv_channels.size();
    if (config_.input.height % div != 0 || config_.input.width % div != 0)
      throw InvalidInput("hash input " + std::to_string(config_.input.height) + "x" +
                         std::to_string(config_.input.width) + " not divisible by " +
                         std::to_string(div));
    for (int c : config_.conv_channels)
      if (c < 1) throw InvalidInput("conv widths must be positive");
    for (int c : config_.hidden)
      if (c < 1) throw InvalidInput("hidden widths must be positive");
  }

  void check_input(const nn::FeatureMap<Scalar>& image) const {
    if (image.height != config_.input.height || image.width != config_.input.width ||
        image.channels() != config_.input.channels)
      throw InvalidInput("hash_forward: image " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + "x" + std::to_string(image.channels()) +
                         " does not match configured input " +
                         std::to_string(config_.input.height) + "x" +
                         std::to_string(config_.input.width) + "x" +
                         std::to_string(config_.input.channels));
  }

  HashNetConfig config_;
  nn::ParamSet<Scalar> params_;
  std::vector<std::size_t> conv_w_, conv_b_, fc_w_, fc_b_;
  std::size_t fch_w_ = 0, fch_b_ = 0;
};

/// Elementwise sign with sign(0) = +1.
template <typename Derived>
Eigen::Matrix<std::int8_t, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>
sign_quantize(const Eigen::MatrixBase<Derived>& w) {
  using Scalar = typename Derived::Scalar;
  return w.unaryExpr([](Scalar v) -> std::int8_t { return v >= Scalar(0) ? 1 : -1; });
}

/// Maps a {-1,+1} code to {0,1} targets (-1 -> 0).
template <typename Derived>
Eigen::Matrix<std::uint8_t, Derived::RowsAtCompileTime, Derived::ColsAtCompileTime>
code_to_bits(const Eigen::MatrixBase<Derived>& code) {
  return code.unaryExpr([](std::int8_t v) -> std::uint8_t { return v > 0 ? 1 : 0; });
}

template <typename Scalar>
struct Activated {
  ContinuousCode<Scalar> code;
  Scalar penalty;
};

/// Adaptive tanh: code = tanh(beta * w), with the constant regulariser
/// eps / beta^2 reported separately as an additive loss term.
template <typename Derived>
Activated<typename Derived::Scalar> atanh_activate(const Eigen::MatrixBase<Derived>& w,
                                                   double beta, double eps) {
  using Scalar = typename Derived::Scalar;
  if (!(beta > 0.0)) throw InvalidInput("atanh_activate: beta must be > 0");
  if (!(eps >= 0.0)) throw InvalidInput("atanh_activate: eps must be >= 0");
  const auto b = static_cast<Scalar>(beta);
  return {(b * w.array()).tanh().matrix(), static_cast<Scalar>(eps / (beta * beta))};
}

/// d tanh(beta w) / d w, elementwise, expressed through the activated code.
template <typename Derived>
auto atanh_derivative(const Eigen::MatrixBase<Derived>& code, double beta) {
  using Scalar = typename Derived::Scalar;
  return (static_cast<Scalar>(beta) * (Scalar(1) - code.array().square())).matrix();
}

/// beta_t = min(beta_max, growth^t); beta_0 = 1.
struct BetaSchedule {
  double growth = 2.0;
  double beta_max = 1024.0;

  double at(int epoch) const {
    if (!(growth > 1.0)) throw InvalidInput("beta growth must be > 1");
    if (!(beta_max >= 1.0)) throw InvalidInput("beta_max must be >= 1");
    return std::min(beta_max, std::pow(growth, epoch));
  }
};

// ---------------------------------------------------------------------------
// first stream: attention -> normalise -> Hadamard -> hashing network

template <typename Scalar>
struct FirstStreamCache {
  typename AttentionNet<Scalar>::Cache attention;
  AttentionMap<Scalar> raw_map;
  AttentionMap<Scalar> norm_map;
  nn::FeatureMap<Scalar> image;
  typename HashNet<Scalar>::Cache hash;
};

template <typename Scalar>
ContinuousCode<Scalar> first_stream_forward(const nn::FeatureMap<Scalar>& image,
                                            const AttentionNet<Scalar>& attention,
                                            const HashNet<Scalar>& hash,
                                            FirstStreamCache<Scalar>& cache) {
  cache.raw_map = as_map(attention.forward(image, cache.attention));
  cache.norm_map = normalize_map(cache.raw_map);
  cache.image = image;
  const nn::FeatureMap<Scalar> attended{apply_attention(image.data, cache.norm_map), image.height,
                                        image.width};
  return hash.forward(attended, cache.hash);
}

/// Backpropagates `dcode` through both networks into `att_grads` and `hash_grads`.
template <typename Scalar>
void first_stream_backward(const FirstStreamCache<Scalar>& cache,
                           const ContinuousCode<Scalar>& dcode,
                           const AttentionNet<Scalar>& attention, const HashNet<Scalar>& hash,
                           nn::Grads<Scalar>& att_grads, nn::Grads<Scalar>& hash_grads) {
  const auto dattended = hash.backward(cache.hash, dcode, hash_grads);
  const AttentionMap<Scalar> dnorm = apply_attention_backward_map<Scalar>(
      cache.image.data, dattended.data, cache.image.height, cache.image.width);
  const AttentionMap<Scalar> draw = normalize_map_backward(cache.raw_map, dnorm);
  attention.backward(cache.attention, as_feature_map(draw), att_grads, false);
}

/// sign(Hash(attended image | first hashing network)).
template <typename Scalar>
BinaryCode encode_attention_guided(const nn::FeatureMap<Scalar>& image,
                                   const AttentionNet<Scalar>& attention,
                                   const HashNet<Scalar>& hash) {
  FirstStreamCache<Scalar> cache;
  return sign_quantize(first_stream_forward(image, attention, hash, cache));
}

/// sign(Hash(image | second hashing network)); also the out-of-sample encoder.
template <typename Scalar>
BinaryCode encode_final(const nn::FeatureMap<Scalar>& image, const HashNet<Scalar>& hash) {
  return sign_quantize(hash.forward(image));
}

}  // namespace dagh
