#include "doctest.h"

#include <cmath>
#include <random>

#include "dagh/losses.hpp"
#include "support.hpp"

using namespace dagh;
using testing::random_matrix;

namespace {

// reference values below come from 30-digit arithmetic
const double kLn2 = 0.6931471805599453094;

Eigen::MatrixXd fixed_codes() {
  Eigen::MatrixXd u(3, 3);
  u << 0.5, -1.0, 2.0, 1.5, 0.5, -0.5, -1.0, 1.0, 1.0;
  return u;
}

Eigen::MatrixXd fixed_sim() {
  Eigen::MatrixXd s(3, 3);
  s << 1, 1, 0, 1, 1, 0, 0, 0, 1;
  return s;
}

Eigen::MatrixXd random_sim(Eigen::Index n, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  Eigen::MatrixXd s = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) s(i, j) = s(j, i) = coin(rng) ? 1.0 : 0.0;
  return s;
}

template <typename F>
Eigen::MatrixXd numeric_grad(Eigen::MatrixXd x, F f, double step) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x(i);
    x(i) = saved + step;
    const double up = f(x);
    x(i) = saved - step;
    const double down = f(x);
    x(i) = saved;
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace

TEST_CASE("half inner product") {
  Eigen::Vector3d a(1, -1, 1), b(1, 1, 1);
  CHECK(half_inner_product(a, b) == 0.5);
  CHECK(half_inner_product(a, a) == 1.5);
  CHECK(half_inner_product(a, (-a).eval()) == -1.5);
  CHECK_THROWS_AS(half_inner_product(a, Eigen::Vector2d(1, 1)), InvalidInput);
}

TEST_CASE("softplus is stable") {
  CHECK(softplus(0.0) == doctest::Approx(kLn2).epsilon(1e-15));
  CHECK(softplus(-20.0) == doctest::Approx(2.061153620314380703e-9).epsilon(1e-12));
  CHECK(softplus(800.0) == 800.0);
  CHECK(softplus(-800.0) == 0.0);
  CHECK(logistic(0.0) == 0.5);
  CHECK(logistic(-800.0) == 0.0);
  CHECK(logistic(800.0) == 1.0);
}

TEST_CASE("semantic loss at orthogonal codes is ln 2 per pair") {
  Eigen::MatrixXd u(2, 2);
  u << 1, 1, 1, -1;
  for (double s : {0.0, 1.0}) {
    Eigen::MatrixXd sim(2, 2);
    sim << 1, s, s, 1;
    CHECK(semantic_loss(u, sim) == doctest::Approx(kLn2).epsilon(1e-14));
  }
  CHECK(semantic_loss(Eigen::MatrixXd::Zero(4, 5), Eigen::MatrixXd::Identity(4, 4)) ==
        doctest::Approx(6 * kLn2).epsilon(1e-14));
}

TEST_CASE("semantic loss on a fixed batch") {
  CHECK(semantic_loss(fixed_codes(), fixed_sim()) ==
        doctest::Approx(2.1109336901335835494967).epsilon(1e-13));
}

TEST_CASE("semantic loss ignores the diagonal of the similarity") {
  Eigen::MatrixXd s = fixed_sim();
  Eigen::MatrixXd s0 = s;
  s0.diagonal().setZero();
  CHECK(semantic_loss(fixed_codes(), s) == semantic_loss(fixed_codes(), s0));
  CHECK(semantic_loss_grad(fixed_codes(), s) == semantic_loss_grad(fixed_codes(), s0));
}

TEST_CASE("semantic loss decreases as similar codes align") {
  Eigen::MatrixXd sim = Eigen::MatrixXd::Ones(2, 2);
  Eigen::MatrixXd u(2, 3);
  u << 1, 1, 1, -1, -1, -1;
  double prev = semantic_loss(u, sim);
  for (int t = 1; t <= 6; ++t) {
    u.row(1) = Eigen::RowVector3d::Constant(-1.0 + t / 3.0);
    const double now = semantic_loss(u, sim);
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("semantic gradient matches finite differences") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXd u = random_matrix(5, 8, rng, 0.7);
    const Eigen::MatrixXd s = random_sim(5, rng);
    const Eigen::MatrixXd g = semantic_loss_grad(u, s);
    const Eigen::MatrixXd n =
        numeric_grad(u, [&](const Eigen::MatrixXd& x) { return semantic_loss(x, s); }, 1e-5);
    CHECK((g - n).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("attention loss on a fixed batch") {
  CHECK(attention_loss(fixed_codes(), fixed_sim(), 0.1) ==
        doctest::Approx(1.40057034914528979552).epsilon(1e-13));
  CHECK(attention_loss(fixed_codes(), fixed_sim(), 0.3) ==
        doctest::Approx(1.46168683307883654169).epsilon(1e-13));
  // every pair inside the margin
  CHECK(attention_loss(fixed_codes(), fixed_sim(), 0.9) == doctest::Approx(2.7).epsilon(1e-14));
  CHECK(attention_loss_grad(fixed_codes(), fixed_sim(), 0.9).isZero());
}

TEST_CASE("attention loss pair cases") {
  Eigen::MatrixXd same(2, 2), opposite(2, 2), orth(2, 2);
  same << 1, 2, 2, 4;
  opposite << 1, 2, -1, -2;
  orth << 1, 0, 0, 3;
  const Eigen::MatrixXd sim1 = Eigen::MatrixXd::Ones(2, 2);
  const Eigen::MatrixXd sim0 = Eigen::MatrixXd::Identity(2, 2);
  const double lambda = 0.3;
  // d = 0: the margin term is lambda
  CHECK(attention_loss(same, sim1, lambda) == doctest::Approx(lambda));
  CHECK(attention_loss(opposite, sim0, lambda) == doctest::Approx(lambda));
  // d = 1
  CHECK(attention_loss(same, sim0, lambda) == doctest::Approx(1.0));
  CHECK(attention_loss(opposite, sim1, lambda) == doctest::Approx(1.0));
  // orthogonal codes sit at affinity 0.5
  CHECK(attention_loss(orth, sim1, lambda) == doctest::Approx(0.5));
  CHECK(attention_loss(orth, sim0, lambda) == doctest::Approx(0.5));
  CHECK(attention_loss(orth, sim1, 0.7) == doctest::Approx(0.7));
}

TEST_CASE("attention loss is scale invariant per row") {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd u = random_matrix(6, 5, rng);
  const Eigen::MatrixXd s = random_sim(6, rng);
  Eigen::MatrixXd scaled = u;
  for (Eigen::Index i = 0; i < 6; ++i) scaled.row(i) *= 0.5 + i;
  CHECK(attention_loss(scaled, s, 0.2) == doctest::Approx(attention_loss(u, s, 0.2)).epsilon(1e-12));
}

TEST_CASE("attention gradient matches finite differences") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXd u = random_matrix(5, 8, rng);
    const Eigen::MatrixXd s = random_sim(5, rng);
    const double lambda = 0.05;
    const Eigen::MatrixXd g = attention_loss_grad(u, s, lambda);
    const Eigen::MatrixXd n = numeric_grad(
        u, [&](const Eigen::MatrixXd& x) { return attention_loss(x, s, lambda); }, 1e-6);
    CHECK((g - n).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("stage one loss combines its components") {
  const auto u = fixed_codes();
  const auto s = fixed_sim();
  const auto v0 = stage1_loss(u, s, 0.0, 0.3, 2.0, 1e-3);
  CHECK(v0.value == doctest::Approx(semantic_loss(u, s) + 1e-3 / 4.0).epsilon(1e-14));
  const auto v = stage1_loss(u, s, 0.5, 0.3, 2.0, 1e-3);
  CHECK(v.components.at("sem") == semantic_loss(u, s));
  CHECK(v.components.at("att") == attention_loss(u, s, 0.3));
  CHECK(v.components.at("penalty") == doctest::Approx(2.5e-4));
  CHECK(v.value == doctest::Approx(v.components.at("sem") + 0.5 * v.components.at("att") +
                                   v.components.at("penalty")));
  CHECK_THROWS_AS(stage1_loss(u, s, -1.0, 0.3, 2.0, 1e-3), InvalidInput);
  CHECK_THROWS_AS(stage1_loss(u, s, 0.5, 0.3, 0.0, 1e-3), InvalidInput);
}

TEST_CASE("guide loss values") {
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(3, 4);
  Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(3, 4);
  targets(0, 1) = targets(2, 3) = 1.0;
  CHECK(guide_loss(zero, targets) == doctest::Approx(kLn2).epsilon(1e-14));

  Eigen::MatrixXd y(1, 1), b(1, 1);
  y << 20.0;
  b << 1.0;
  CHECK(guide_loss(y, b) == doctest::Approx(2.061153620314380703e-9).epsilon(1e-9));

  Eigen::MatrixXd logits(2, 3), t(2, 3);
  logits << 0.5, -1, 2, 0, 3, -0.25;
  t << 1, 0, 1, 0, 0, 1;
  CHECK(guide_loss(logits, t) == doctest::Approx(0.91365677245897215695).epsilon(1e-14));
}

TEST_CASE("guide gradient") {
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 2);
  Eigen::MatrixXd t(1, 2);
  t << 1, 0;
  const Eigen::MatrixXd g = guide_grad(zero, t);
  // (sigma(0) - b) / (N K)
  CHECK(g(0, 0) == doctest::Approx(-0.25));
  CHECK(g(0, 1) == doctest::Approx(0.25));

  std::mt19937_64 rng(4);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd y = random_matrix(5, 8, rng, 2.0);
    Eigen::MatrixXd b(5, 8);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = coin(rng) ? 1.0 : 0.0;
    const Eigen::MatrixXd a = guide_grad(y, b);
    const Eigen::MatrixXd n =
        numeric_grad(y, [&](const Eigen::MatrixXd& x) { return guide_loss(x, b); }, 1e-5);
    for (Eigen::Index i = 0; i < a.size(); ++i)
      CHECK(std::abs(a(i) - n(i)) / std::max({std::abs(a(i)), std::abs(n(i)), 1e-8}) < 1e-6);
  }
}

TEST_CASE("guide loss is minimised by matching targets") {
  Eigen::MatrixXd t(2, 2);
  t << 1, 0, 0, 1;
  const Eigen::MatrixXd signs = 2.0 * t.array() - 1.0;
  double prev = guide_loss(Eigen::MatrixXd::Zero(2, 2), t);
  for (double scale : {1.0, 4.0, 16.0}) {
    const Eigen::MatrixXd y = scale * signs;
    const double now = guide_loss(y, t);
    CHECK(now < prev);
    CHECK(guide_loss(-y, t) > now);
    prev = now;
  }
}

TEST_CASE("loss input validation") {
  const auto u = fixed_codes();
  Eigen::MatrixXd bad = fixed_sim();
  bad(0, 1) = 0.5;
  CHECK_THROWS_AS(semantic_loss(u, bad), InvalidInput);
  CHECK_THROWS_AS(attention_loss(u, bad, 0.3), InvalidInput);
  CHECK_THROWS_AS(semantic_loss(u, Eigen::MatrixXd::Ones(2, 2)), InvalidInput);
  CHECK_THROWS_AS(attention_loss(u, fixed_sim(), 0.0), InvalidInput);
  Eigen::MatrixXd zero_row = u;
  zero_row.row(1).setZero();
  CHECK_THROWS_AS(attention_loss(zero_row, fixed_sim(), 0.3), InvalidInput);
  CHECK_THROWS_AS(attention_loss_grad(zero_row, fixed_sim(), 0.3), InvalidInput);
  CHECK_THROWS_AS(guide_loss(u, Eigen::MatrixXd::Zero(3, 2)), InvalidInput);
  CHECK_THROWS_AS(guide_loss(u, Eigen::MatrixXd::Constant(3, 3, 2.0)), InvalidInput);
  CHECK_THROWS_AS(guide_grad(Eigen::MatrixXd(0, 0), Eigen::MatrixXd(0, 0)), InvalidInput);
}
