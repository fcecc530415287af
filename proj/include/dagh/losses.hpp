#pragma once

// Pairwise and per-bit losses of the two training stages, with analytic
// gradients w.r.t. the codes/logits. Pair sums run over unordered pairs
// i < j; self-pairs never contribute. Everything is evaluated in double.

#include <cmath>
#include <map>
#include <string>

#include <Eigen/Dense>

#include "dagh/errors.hpp"

namespace dagh {

/// Numerically stable log(1 + exp(x)).
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double logistic(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// (1/2) a^T b
template <typename A, typename B>
double half_inner_product(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.size() != b.size())
    throw InvalidInput("half_inner_product: lengths " + std::to_string(a.size()) + " and " +
                       std::to_string(b.size()) + " differ");
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k)
    s += static_cast<double>(a.derived().coeff(k)) * static_cast<double>(b.derived().coeff(k));
  return 0.5 * s;
}

namespace detail {

template <typename S>
void check_similarity(const Eigen::MatrixBase<S>& sim, Eigen::Index batch, const char* who) {
  if (sim.rows() != batch || sim.cols() != batch)
    throw InvalidInput(std::string(who) + ": similarity matrix must be " + std::to_string(batch) +
                       "x" + std::to_string(batch));
  for (Eigen::Index i = 0; i < batch; ++i)
    for (Eigen::Index j = 0; j < batch; ++j) {
      const auto v = static_cast<double>(sim(i, j));
      if (v != 0.0 && v != 1.0)
        throw InvalidInput(std::string(who) + ": similarity entries must be 0 or 1");
    }
}

template <typename T>
void check_targets(const Eigen::MatrixBase<T>& targets, Eigen::Index rows, Eigen::Index cols) {
  if (targets.rows() != rows || targets.cols() != cols)
    throw InvalidInput("guide loss: targets shape does not match logits");
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) {
      const auto v = static_cast<double>(targets(i, k));
      if (v != 0.0 && v != 1.0) throw InvalidInput("guide loss: targets must be 0 or 1");
    }
}

/// (cos(a, b) + 1) / 2
inline double cosine_affinity(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double na,
                              double nb) {
  return 0.5 * (a.dot(b) / (na * nb) + 1.0);
}

}  // namespace detail

/// Negative log-likelihood of pairwise labels under sigma(<w_i, w_j>/2):
/// sum_{i<j} log(1 + exp(theta_ij)) - s_ij * theta_ij. `codes` holds one
/// code per row.
template <typename C, typename S>
double semantic_loss(const Eigen::MatrixBase<C>& codes, const Eigen::MatrixBase<S>& sim) {
  detail::check_similarity(sim, codes.rows(), "semantic_loss");
  const Eigen::MatrixXd u = codes.template cast<double>();
  const Eigen::MatrixXd theta = 0.5 * u * u.transpose();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index j = i + 1; j < u.rows(); ++j)
      loss += softplus(theta(i, j)) - static_cast<double>(sim(i, j)) * theta(i, j);
  return loss;
}

template <typename C, typename S>
Eigen::MatrixXd semantic_loss_grad(const Eigen::MatrixBase<C>& codes,
                                   const Eigen::MatrixBase<S>& sim) {
  detail::check_similarity(sim, codes.rows(), "semantic_loss");
  const Eigen::MatrixXd u = codes.template cast<double>();
  const Eigen::MatrixXd theta = 0.5 * u * u.transpose();
  // dL/dtheta_ij = sigma(theta) - s; dtheta_ij/du_i = u_j / 2
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(u.rows(), u.rows());
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index j = 0; j < u.rows(); ++j)
      if (i != j) coef(i, j) = 0.5 * (logistic(theta(i, j)) - static_cast<double>(sim(i, j)));
  return coef * u;
}

/// sum_{i<j} d_ij + max(0, lambda - d_ij), d_ij = |s_ij - (cos(w_i, w_j) + 1)/2|.
template <typename C, typename S>
double attention_loss(const Eigen::MatrixBase<C>& codes, const Eigen::MatrixBase<S>& sim,
                      double lambda) {
  if (!(lambda > 0.0)) throw InvalidInput("attention_loss: lambda must be > 0");
  detail::check_similarity(sim, codes.rows(), "attention_loss");
  const Eigen::MatrixXd u = codes.template cast<double>();
  const Eigen::VectorXd norms = u.rowwise().norm();
  if ((norms.array() == 0.0).any()) throw InvalidInput("attention_loss: zero-norm code row");
  double loss = 0.0;
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index j = i + 1; j < u.rows(); ++j) {
      const double c = detail::cosine_affinity(u.row(i).transpose(), u.row(j).transpose(),
                                               norms(i), norms(j));
      const double d = std::abs(static_cast<double>(sim(i, j)) - c);
      loss += d + std::max(0.0, lambda - d);
    }
  return loss;
}

/// Pairs with d <= lambda contribute the constant lambda and have zero gradient.
template <typename C, typename S>
Eigen::MatrixXd attention_loss_grad(const Eigen::MatrixBase<C>& codes,
                                    const Eigen::MatrixBase<S>& sim, double lambda) {
  if (!(lambda > 0.0)) throw InvalidInput("attention_loss: lambda must be > 0");
  detail::check_similarity(sim, codes.rows(), "attention_loss");
  const Eigen::MatrixXd u = codes.template cast<double>();
  const Eigen::VectorXd norms = u.rowwise().norm();
  if ((norms.array() == 0.0).any()) throw InvalidInput("attention_loss: zero-norm code row");
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(u.rows(), u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index j = i + 1; j < u.rows(); ++j) {
      const double cos = u.row(i).dot(u.row(j)) / (norms(i) * norms(j));
      const double c = 0.5 * (cos + 1.0);
      const double s = static_cast<double>(sim(i, j));
      const double d = std::abs(s - c);
      if (d <= lambda) continue;
      const double dc = (c > s ? 1.0 : -1.0) * 0.5;
      grad.row(i) += dc * (u.row(j) / (norms(i) * norms(j)) - cos * u.row(i) / (norms(i) * norms(i)));
      grad.row(j) += dc * (u.row(i) / (norms(i) * norms(j)) - cos * u.row(j) / (norms(j) * norms(j)));
    }
  return grad;
}

struct LossValue {
  double value = 0.0;
  /// sem, att, penalty, guide (whichever apply)
  std::map<std::string, double> components;
};

/// sem + nu * att + eps / beta^2
template <typename C, typename S>
LossValue stage1_loss(const Eigen::MatrixBase<C>& codes, const Eigen::MatrixBase<S>& sim,
                      double nu, double lambda, double beta, double eps) {
  if (!(nu >= 0.0)) throw InvalidInput("stage1_loss: nu must be >= 0");
  if (!(beta > 0.0)) throw InvalidInput("stage1_loss: beta must be > 0");
  LossValue out;
  const double sem = semantic_loss(codes, sim);
  const double att = attention_loss(codes, sim, lambda);
  const double penalty = eps / (beta * beta);
  out.components = {{"sem", sem}, {"att", att}, {"penalty", penalty}};
  out.value = sem + nu * att + penalty;
  return out;
}

/// Mean sigmoid cross-entropy between logits and {0,1} targets, evaluated
/// as softplus(y) - b * y.
template <typename L, typename T>
double guide_loss(const Eigen::MatrixBase<L>& logits, const Eigen::MatrixBase<T>& targets) {
  detail::check_targets(targets, logits.rows(), logits.cols());
  if (logits.size() == 0) throw InvalidInput("guide loss: empty logits");
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      const auto y = static_cast<double>(logits(i, k));
      loss += softplus(y) - static_cast<double>(targets(i, k)) * y;
    }
  return loss / static_cast<double>(logits.size());
}

/// d guide_loss / d logits = (sigma(y) - b) / (K N).
template <typename L, typename T>
Eigen::MatrixXd guide_grad(const Eigen::MatrixBase<L>& logits, const Eigen::MatrixBase<T>& targets) {
  detail::check_targets(targets, logits.rows(), logits.cols());
  if (logits.size() == 0) throw InvalidInput("guide loss: empty logits");
  const double scale = 1.0 / static_cast<double>(logits.size());
  Eigen::MatrixXd g(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    for (Eigen::Index k = 0; k < logits.cols(); ++k)
      g(i, k) = scale * (logistic(static_cast<double>(logits(i, k))) -
                         static_cast<double>(targets(i, k)));
  return g;
}

}  // namespace dagh
