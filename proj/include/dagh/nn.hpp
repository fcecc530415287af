#pragma once

// Minimal dense building blocks for the attention and hashing networks.
//
// Feature maps are stored planar: one row per channel, one column per
// pixel (index = row * width + col). Layers are free functions over
// parameter matrices so forward passes stay const w.r.t. the network and
// per-sample caches/gradients can live outside it.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dagh/errors.hpp"

namespace dagh::nn {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct FeatureMap {
  Mat<Scalar> data;  // channels x (height * width)
  int height = 0;
  int width = 0;

  Eigen::Index channels() const { return data.rows(); }
};

/// One learnable tensor. `lr_scale` multiplies the base learning rate.
template <typename Scalar>
struct Param {
  std::string name;
  Mat<Scalar> value;
  Scalar lr_scale = Scalar(1);
};

/// Ordered parameter collection; the order is the checkpoint order.
template <typename Scalar>
class ParamSet {
 public:
  std::size_t add(std::string name, Mat<Scalar> value, Scalar lr_scale = Scalar(1)) {
    params_.push_back({std::move(name), std::move(value), lr_scale});
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Param<Scalar>& operator[](std::size_t i) { return params_[i]; }
  const Param<Scalar>& operator[](std::size_t i) const { return params_[i]; }
  const Mat<Scalar>& value(std::size_t i) const { return params_[i].value; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  Eigen::Index total_size() const {
    Eigen::Index n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& p : params_)
      if (!p.value.allFinite()) return false;
    return true;
  }

  /// Zero-initialised buffers shaped like the parameters.
  std::vector<Mat<Scalar>> zeros_like() const {
    std::vector<Mat<Scalar>> g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.push_back(Mat<Scalar>::Zero(p.value.rows(), p.value.cols()));
    return g;
  }

  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (const auto& p : params_)
      out.add(p.name, p.value.template cast<Other>(), static_cast<Other>(p.lr_scale));
    return out;
  }

 private:
  std::vector<Param<Scalar>> params_;
};

template <typename Scalar>
using Grads = std::vector<Mat<Scalar>>;

template <typename Scalar>
void accumulate(Grads<Scalar>& into, const Grads<Scalar>& from) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}

// ---------------------------------------------------------------------------
// initialisation

template <typename Scalar>
Mat<Scalar> random_normal(Eigen::Index rows, Eigen::Index cols, double stddev,
                          std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  return m;
}

/// He-style fan-in scaling; weight rows are output units.
template <typename Scalar>
Mat<Scalar> fan_in_normal(Eigen::Index out, Eigen::Index fan_in, std::mt19937_64& rng) {
  return random_normal<Scalar>(out, fan_in, std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

// ---------------------------------------------------------------------------
// convolution (odd square kernel, stride 1, zero "same" padding)

template <typename Scalar>
Mat<Scalar> im2col(const FeatureMap<Scalar>& x, int kernel) {
  const int h = x.height, w = x.width, pad = kernel / 2;
  const Eigen::Index c = x.channels();
  Mat<Scalar> cols = Mat<Scalar>::Zero(c * kernel * kernel, static_cast<Eigen::Index>(h) * w);
  for (Eigen::Index ch = 0; ch < c; ++ch)
    for (int ki = 0; ki < kernel; ++ki)
      for (int kj = 0; kj < kernel; ++kj) {
        const Eigen::Index row = (ch * kernel + ki) * kernel + kj;
        for (int r = 0; r < h; ++r) {
          const int sr = r + ki - pad;
          if (sr < 0 || sr >= h) continue;
          for (int q = 0; q < w; ++q) {
            const int sq = q + kj - pad;
            if (sq < 0 || sq >= w) continue;
            cols(row, r * w + q) = x.data(ch, sr * w + sq);
          }
        }
      }
  return cols;
}

template <typename Scalar>
FeatureMap<Scalar> col2im(const Mat<Scalar>& cols, Eigen::Index channels, int h, int w,
                          int kernel) {
  const int pad = kernel / 2;
  FeatureMap<Scalar> x{Mat<Scalar>::Zero(channels, static_cast<Eigen::Index>(h) * w), h, w};
  for (Eigen::Index ch = 0; ch < channels; ++ch)
    for (int ki = 0; ki < kernel; ++ki)
      for (int kj = 0; kj < kernel; ++kj) {
        const Eigen::Index row = (ch * kernel + ki) * kernel + kj;
        for (int r = 0; r < h; ++r) {
          const int sr = r + ki - pad;
          if (sr < 0 || sr >= h) continue;
          for (int q = 0; q < w; ++q) {
            const int sq = q + kj - pad;
            if (sq < 0 || sq >= w) continue;
            x.data(ch, sr * w + sq) += cols(row, r * w + q);
          }
        }
      }
  return x;
}

/// Weight is out_channels x (in_channels * k * k); bias is out_channels x 1.
template <typename Scalar>
FeatureMap<Scalar> conv_forward(const Mat<Scalar>& weight, const Mat<Scalar>& bias,
                                const FeatureMap<Scalar>& x, int kernel, Mat<Scalar>& cols) {
  cols = im2col(x, kernel);
  FeatureMap<Scalar> y{weight * cols, x.height, x.width};
  y.data.colwise() += bias.col(0);
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> conv_backward(const Mat<Scalar>& weight, const Mat<Scalar>& cols,
                                 const FeatureMap<Scalar>& dy, int kernel, Mat<Scalar>& dweight,
                                 Mat<Scalar>& dbias, bool need_input_grad = true) {
  dweight.noalias() += dy.data * cols.transpose();
  dbias.col(0) += dy.data.rowwise().sum();
  if (!need_input_grad) return {};
  const Eigen::Index in_channels = weight.cols() / (kernel * kernel);
  return col2im<Scalar>(weight.transpose() * dy.data, in_channels, dy.height, dy.width, kernel);
}

// ---------------------------------------------------------------------------
// pointwise / resampling

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return x >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-x))
                : std::exp(x) / (Scalar(1) + std::exp(x));
}

/// SiLU: x * sigmoid(x). Smooth, so finite-difference checks see no kinks.
template <typename Scalar>
Mat<Scalar> silu(const Mat<Scalar>& x) {
  return x.unaryExpr([](Scalar v) { return v * sigmoid(v); });
}

template <typename Scalar>
Mat<Scalar> silu_backward(const Mat<Scalar>& x, const Mat<Scalar>& dy) {
  return x.binaryExpr(dy, [](Scalar v, Scalar g) {
    const Scalar s = sigmoid(v);
    return g * s * (Scalar(1) + v * (Scalar(1) - s));
  });
}

/// 2x2 average pooling; height and width must be even.
template <typename Scalar>
FeatureMap<Scalar> avg_pool2(const FeatureMap<Scalar>& x) {
  if (x.height % 2 != 0 || x.width % 2 != 0)
    throw InvalidInput("avg_pool2: spatial size " + std::to_string(x.height) + "x" +
                       std::to_string(x.width) + " is not even");
  const int h = x.height / 2, w = x.width / 2;
  FeatureMap<Scalar> y{Mat<Scalar>(x.channels(), static_cast<Eigen::Index>(h) * w), h, w};
  for (int r = 0; r < h; ++r)
    for (int q = 0; q < w; ++q) {
      const int a = 2 * r * x.width + 2 * q;
      y.data.col(r * w + q) = Scalar(0.25) * (x.data.col(a) + x.data.col(a + 1) +
                                              x.data.col(a + x.width) +
                                              x.data.col(a + x.width + 1));
    }
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> avg_pool2_backward(const FeatureMap<Scalar>& dy) {
  const int h = dy.height * 2, w = dy.width * 2;
  FeatureMap<Scalar> dx{Mat<Scalar>(dy.channels(), static_cast<Eigen::Index>(h) * w), h, w};
  for (int r = 0; r < h; ++r)
    for (int q = 0; q < w; ++q)
      dx.data.col(r * w + q) = Scalar(0.25) * dy.data.col((r / 2) * dy.width + q / 2);
  return dx;
}

/// Nearest-neighbour x2 upsampling.
template <typename Scalar>
FeatureMap<Scalar> upsample2(const FeatureMap<Scalar>& x) {
  const int h = x.height * 2, w = x.width * 2;
  FeatureMap<Scalar> y{Mat<Scalar>(x.channels(), static_cast<Eigen::Index>(h) * w), h, w};
  for (int r = 0; r < h; ++r)
    for (int q = 0; q < w; ++q) y.data.col(r * w + q) = x.data.col((r / 2) * x.width + q / 2);
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> upsample2_backward(const FeatureMap<Scalar>& dy) {
  const int h = dy.height / 2, w = dy.width / 2;
  FeatureMap<Scalar> dx{Mat<Scalar>::Zero(dy.channels(), static_cast<Eigen::Index>(h) * w), h, w};
  for (int r = 0; r < dy.height; ++r)
    for (int q = 0; q < dy.width; ++q) dx.data.col((r / 2) * w + q / 2) += dy.data.col(r * dy.width + q);
  return dx;
}

}  // namespace dagh::nn
