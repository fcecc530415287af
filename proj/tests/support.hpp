#pragma once

// Shared test helpers: central finite differences and brute-force retrieval
// oracles written without any library code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dagh/hashnet.hpp"
#include "dagh/nn.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("dagh_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Largest |a - n| / max(|a|, |n|, floor) over every parameter entry, where a
/// is the analytic gradient and n the central difference of loss().
inline double max_param_fd_error(dagh::nn::ParamSet<double>& params,
                                 const dagh::nn::Grads<double>& analytic,
                                 const std::function<double()>& loss, double step = 1e-3,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& value = params[p].value;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value(i);
      value(i) = saved + step;
      const double up = loss();
      value(i) = saved - step;
      const double down = loss();
      value(i) = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[p](i);
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                                     double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = dist(rng);
  return m;
}

inline dagh::CodeMatrix random_codes(Eigen::Index n, Eigen::Index k, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  dagh::CodeMatrix c(n, k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < k; ++j) c(i, j) = coin(rng) ? 1 : -1;
  return c;
}

// ---------------------------------------------------------------------------
// brute-force retrieval oracles over unpacked codes

inline int oracle_distance(const dagh::CodeMatrix& a, Eigen::Index i, const dagh::CodeMatrix& b,
                           Eigen::Index j) {
  int dot = 0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) dot += a(i, k) * b(j, k);
  return static_cast<int>((a.cols() - dot) / 2);
}

/// Gallery ids sorted by (distance, id).
inline std::vector<std::int64_t> oracle_ranking(const dagh::CodeMatrix& q, Eigen::Index qi,
                                                const dagh::CodeMatrix& g) {
  std::vector<std::pair<int, std::int64_t>> keyed;
  for (Eigen::Index j = 0; j < g.rows(); ++j) keyed.emplace_back(oracle_distance(q, qi, g, j), j);
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::int64_t> ids;
  for (const auto& kv : keyed) ids.push_back(kv.second);
  return ids;
}

using Relevance = std::vector<std::vector<int>>;  // [query][gallery] in {0,1}

inline double oracle_map(const dagh::CodeMatrix& q, const dagh::CodeMatrix& g,
                         const Relevance& rel, int cutoff) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const auto& r = rel[static_cast<std::size_t>(i)];
    const int relevant = std::accumulate(r.begin(), r.end(), 0);
    if (relevant == 0) continue;
    const auto ids = oracle_ranking(q, i, g);
    double ap = 0.0;
    int hits = 0;
    for (int d = 0; d < std::min<int>(cutoff, static_cast<int>(ids.size())); ++d)
      if (r[static_cast<std::size_t>(ids[static_cast<std::size_t>(d)])]) {
        ++hits;
        ap += static_cast<double>(hits) / (d + 1);
      }
    total += ap / std::min(relevant, cutoff);
  }
  return total / static_cast<double>(q.rows());
}

inline double oracle_p_at_radius(const dagh::CodeMatrix& q, const dagh::CodeMatrix& g,
                                 const Relevance& rel, int radius) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    int found = 0, good = 0;
    for (Eigen::Index j = 0; j < g.rows(); ++j)
      if (oracle_distance(q, i, g, j) <= radius) {
        ++found;
        good += rel[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      }
    if (found > 0) total += static_cast<double>(good) / found;
  }
  return total / static_cast<double>(q.rows());
}

/// (recall, precision) per depth, averaged over queries with a relevant item.
inline std::vector<std::pair<double, double>> oracle_pr(const dagh::CodeMatrix& q,
                                                        const dagh::CodeMatrix& g,
                                                        const Relevance& rel) {
  const auto n = static_cast<std::size_t>(g.rows());
  std::vector<std::pair<double, double>> curve(n, {0.0, 0.0});
  int counted = 0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const auto& r = rel[static_cast<std::size_t>(i)];
    const int relevant = std::accumulate(r.begin(), r.end(), 0);
    if (relevant == 0) continue;
    ++counted;
    const auto ids = oracle_ranking(q, i, g);
    for (std::size_t d = 0; d < n; ++d) {
      int hits = 0;
      for (std::size_t t = 0; t <= d; ++t) hits += r[static_cast<std::size_t>(ids[t])];
      curve[d].first += static_cast<double>(hits) / relevant;
      curve[d].second += static_cast<double>(hits) / static_cast<double>(d + 1);
    }
  }
  if (counted == 0) return {};
  for (auto& p : curve) p.first /= counted, p.second /= counted;
  return curve;
}

inline double oracle_p_at_n(const dagh::CodeMatrix& q, const dagh::CodeMatrix& g,
                            const Relevance& rel, int n) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const auto ids = oracle_ranking(q, i, g);
    int hits = 0;
    for (int d = 0; d < n; ++d)
      hits += rel[static_cast<std::size_t>(i)][static_cast<std::size_t>(ids[static_cast<std::size_t>(d)])];
    total += static_cast<double>(hits) / n;
  }
  return total / static_cast<double>(q.rows());
}

}  // namespace testing
