#include "doctest.h"

#include <random>

#include "dagh/attention.hpp"
#include "dagh/nn.hpp"
#include "support.hpp"

using namespace dagh;
using testing::max_param_fd_error;
using testing::random_matrix;

namespace {

using MatD = nn::Mat<double>;
using FM = nn::FeatureMap<double>;

FM random_image(int h, int w, int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FM x{MatD(c, h * w), h, w};
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data(i) = u(rng);
  return x;
}

AttentionConfig small_config() {
  AttentionConfig c;
  c.input = {4, 4, 2};
  c.widths = {3, 4};
  return c;
}

}  // namespace

TEST_CASE("conv forward matches direct convolution") {
  std::mt19937_64 rng(1);
  const FM x = random_image(5, 4, 2, rng);
  const MatD w = random_matrix(3, 2 * 9, rng);
  const MatD b = random_matrix(3, 1, rng);
  MatD cols;
  const auto y = nn::conv_forward(w, b, x, 3, cols);
  for (int o = 0; o < 3; ++o)
    for (int r = 0; r < 5; ++r)
      for (int q = 0; q < 4; ++q) {
        double acc = b(o, 0);
        for (int c = 0; c < 2; ++c)
          for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj) {
              const int sr = r + ki - 1, sq = q + kj - 1;
              if (sr < 0 || sr >= 5 || sq < 0 || sq >= 4) continue;
              acc += w(o, (c * 3 + ki) * 3 + kj) * x.data(c, sr * 4 + sq);
            }
        CHECK(y.data(o, r * 4 + q) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("conv backward matches finite differences") {
  std::mt19937_64 rng(2);
  FM x = random_image(4, 4, 2, rng);
  nn::ParamSet<double> params;
  params.add("w", random_matrix(3, 2 * 9, rng));
  params.add("b", random_matrix(3, 1, rng));
  const MatD probe = random_matrix(3, 16, rng);
  const auto loss = [&] {
    MatD cols;
    return (nn::conv_forward(params.value(0), params.value(1), x, 3, cols).data.array() *
            probe.array())
        .sum();
  };
  MatD cols;
  nn::conv_forward(params.value(0), params.value(1), x, 3, cols);
  auto grads = params.zeros_like();
  const FM dy{probe, 4, 4};
  const FM dx = nn::conv_backward(params.value(0), cols, dy, 3, grads[0], grads[1]);
  CHECK(max_param_fd_error(params, grads, loss) < 1e-6);

  for (Eigen::Index i = 0; i < x.data.size(); ++i) {
    const double saved = x.data(i);
    x.data(i) = saved + 1e-4;
    const double up = loss();
    x.data(i) = saved - 1e-4;
    const double down = loss();
    x.data(i) = saved;
    CHECK(dx.data(i) == doctest::Approx((up - down) / 2e-4).epsilon(1e-6));
  }
}

TEST_CASE("pool and upsample are adjoint to their backward passes") {
  std::mt19937_64 rng(3);
  const FM x{random_matrix(2, 36, rng), 6, 6};
  const FM y{random_matrix(2, 9, rng), 3, 3};
  const FM px = nn::avg_pool2(x);
  CHECK(px.height == 3);
  const double lhs = (px.data.array() * y.data.array()).sum();
  const double rhs = (x.data.array() * nn::avg_pool2_backward(y).data.array()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

  const FM uy = nn::upsample2(y);
  CHECK(uy.height == 6);
  const double lhs2 = (uy.data.array() * x.data.array()).sum();
  const double rhs2 = (y.data.array() * nn::upsample2_backward(x).data.array()).sum();
  CHECK(lhs2 == doctest::Approx(rhs2).epsilon(1e-12));

  CHECK_THROWS_AS(nn::avg_pool2(FM{MatD::Zero(1, 15), 5, 3}), InvalidInput);
}

TEST_CASE("silu derivative") {
  MatD x(1, 5);
  x << -3.0, -0.5, 0.0, 0.7, 4.0;
  const MatD ones = MatD::Ones(1, 5);
  const MatD d = nn::silu_backward<double>(x, ones);
  for (Eigen::Index i = 0; i < 5; ++i) {
    MatD up = x, down = x;
    up(i) += 1e-6;
    down(i) -= 1e-6;
    const double fd = (nn::silu<double>(up)(i) - nn::silu<double>(down)(i)) / 2e-6;
    CHECK(d(i) == doctest::Approx(fd).epsilon(1e-8));
  }
  CHECK(nn::silu<double>(x)(2) == 0.0);
}

TEST_CASE("attention output keeps the input spatial shape") {
  std::mt19937_64 rng(4);
  for (auto [h, w] : {std::pair{8, 8}, std::pair{16, 8}, std::pair{32, 32}, std::pair{8, 24}}) {
    AttentionConfig c;
    c.input = {h, w, 3};
    AttentionNet<double> net(c, rng);
    const auto out = net.forward(random_image(h, w, 3, rng));
    CHECK(out.channels() == 1);
    CHECK(out.height == h);
    CHECK(out.width == w);
    CHECK(as_map(out).rows() == h);
    CHECK(as_map(out).cols() == w);
  }
}

TEST_CASE("zero output layer gives a constant map") {
  std::mt19937_64 rng(5);
  AttentionNet<double> net(small_config(), rng);
  net.params()[net.output_weight_index()].value.setZero();
  net.params()[net.output_bias_index()].value.setConstant(0.25);
  const auto map = as_map(net.forward(random_image(4, 4, 2, rng)));
  CHECK((map.array() == 0.25).all());
  CHECK((normalize_map(map).array() == 0.5).all());
}

TEST_CASE("attention parameter gradients match finite differences") {
  std::mt19937_64 rng(6);
  AttentionNet<double> net(small_config(), rng);
  for (auto& p : net.params()) p.value += random_matrix(p.value.rows(), p.value.cols(), rng, 0.1);
  const FM x = random_image(4, 4, 2, rng);

  SUBCASE("sum of the output") {
    const auto loss = [&] { return net.forward(x).data.sum(); };
    typename AttentionNet<double>::Cache cache;
    const auto out = net.forward(x, cache);
    auto grads = net.params().zeros_like();
    net.backward(cache, FM{MatD::Ones(1, 16), 4, 4}, grads);
    CHECK(max_param_fd_error(net.params(), grads, loss) < 1e-4);
  }
  SUBCASE("weighted output and input gradient") {
    const MatD probe = random_matrix(1, 16, rng);
    const auto loss_at = [&](const FM& img) {
      return (net.forward(img).data.array() * probe.array()).sum();
    };
    typename AttentionNet<double>::Cache cache;
    net.forward(x, cache);
    auto grads = net.params().zeros_like();
    const FM dx = net.backward(cache, FM{probe, 4, 4}, grads, true);
    CHECK(max_param_fd_error(net.params(), grads, [&] { return loss_at(x); }) < 1e-4);
    FM moved = x;
    for (Eigen::Index i = 0; i < x.data.size(); ++i) {
      moved.data(i) = x.data(i) + 1e-3;
      const double up = loss_at(moved);
      moved.data(i) = x.data(i) - 1e-3;
      const double down = loss_at(moved);
      moved.data(i) = x.data(i);
      CHECK(dx.data(i) == doctest::Approx((up - down) / 2e-3).epsilon(1e-4));
    }
  }
}

TEST_CASE("three-level attention gradients on 8x8") {
  std::mt19937_64 rng(7);
  AttentionConfig c;
  c.input = {8, 8, 1};
  c.widths = {2, 3, 3};
  AttentionNet<double> net(c, rng);
  const FM x = random_image(8, 8, 1, rng);
  const MatD probe = random_matrix(1, 64, rng);
  typename AttentionNet<double>::Cache cache;
  net.forward(x, cache);
  auto grads = net.params().zeros_like();
  net.backward(cache, FM{probe, 8, 8}, grads);
  const auto loss = [&] { return (net.forward(x).data.array() * probe.array()).sum(); };
  CHECK(max_param_fd_error(net.params(), grads, loss) < 1e-4);
}

TEST_CASE("attention config validation") {
  std::mt19937_64 rng(8);
  AttentionConfig c = small_config();
  c.widths = {4};
  CHECK_THROWS_AS(AttentionNet<double>(c, rng), InvalidInput);
  c = small_config();
  c.kernel = 2;
  CHECK_THROWS_AS(AttentionNet<double>(c, rng), InvalidInput);
  c = small_config();
  c.input = {6, 4, 2};
  CHECK_THROWS_AS(AttentionNet<double>(c, rng), InvalidInput);
  AttentionNet<double> net(small_config(), rng);
  CHECK_THROWS_AS(net.forward(random_image(8, 8, 2, rng)), InvalidInput);
}

TEST_CASE("attention cast preserves the function") {
  std::mt19937_64 rng(9);
  AttentionNet<float> f(small_config(), rng);
  const AttentionNet<double> d = f.cast<double>();
  const FM x = random_image(4, 4, 2, rng);
  const auto yd = d.forward(x).data;
  const auto yf = f.forward(nn::FeatureMap<float>{x.data.cast<float>(), 4, 4}).data;
  CHECK((yd - yf.cast<double>()).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("normalize map examples") {
  AttentionMap<double> m(2, 2);
  m << 0, 2, 1, 2;
  AttentionMap<double> expected(2, 2);
  expected << 0, 1, 0.5, 1;
  CHECK(normalize_map(m) == expected);
  CHECK((normalize_map(AttentionMap<double>::Constant(3, 3, 7.0)).array() == 0.5).all());
  CHECK(normalize_map(expected) == expected);
}

TEST_CASE("normalized maps span the unit interval") {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 50; ++t) {
    const AttentionMap<double> m = random_matrix(5, 7, rng, 3.0);
    const auto n = normalize_map(m);
    CHECK(n.minCoeff() == 0.0);
    CHECK(n.maxCoeff() == 1.0);
    CHECK(normalize_map(n).isApprox(n, 1e-15));
    // affine invariance
    const AttentionMap<double> scaled = (2.5 * m.array() + 4.0).matrix();
    CHECK(normalize_map(scaled).isApprox(n, 1e-12));
  }
}

TEST_CASE("normalize map backward matches finite differences") {
  std::mt19937_64 rng(11);
  AttentionMap<double> m = random_matrix(3, 4, rng);
  const AttentionMap<double> dout = random_matrix(3, 4, rng);
  const auto dx = normalize_map_backward(m, dout);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double saved = m(i);
    m(i) = saved + 1e-6;
    const double up = (normalize_map(m).array() * dout.array()).sum();
    m(i) = saved - 1e-6;
    const double down = (normalize_map(m).array() * dout.array()).sum();
    m(i) = saved;
    CHECK(dx(i) == doctest::Approx((up - down) / 2e-6).epsilon(1e-6));
  }
  const AttentionMap<double> flat = AttentionMap<double>::Constant(2, 2, 1.0);
  const AttentionMap<double> corner = dout.topLeftCorner(2, 2);
  CHECK(normalize_map_backward(flat, corner).isZero());
}

TEST_CASE("apply attention examples") {
  std::mt19937_64 rng(12);
  const FM x = random_image(3, 3, 2, rng);
  CHECK(apply_attention(x.data, AttentionMap<double>::Ones(3, 3)) == x.data);
  CHECK(apply_attention(x.data, AttentionMap<double>::Zero(3, 3)).isZero());
  MatD img = MatD::Constant(3, 4, 0.8);
  AttentionMap<double> half = AttentionMap<double>::Constant(2, 2, 0.5);
  const MatD out = apply_attention(img, half);
  CHECK(out(1, 2) == doctest::Approx(0.4));
  CHECK_THROWS_AS(apply_attention(img, AttentionMap<double>::Ones(3, 3)), InvalidInput);
}

TEST_CASE("apply attention map gradient") {
  std::mt19937_64 rng(13);
  const MatD img = random_matrix(3, 6, rng);
  const MatD dout = random_matrix(3, 6, rng);
  AttentionMap<double> map = random_matrix(2, 3, rng);
  const auto g = apply_attention_backward_map<double>(img, dout, 2, 3);
  for (Eigen::Index i = 0; i < map.size(); ++i) {
    const double saved = map(i);
    map(i) = saved + 1e-6;
    const double up = (apply_attention(img, map).array() * dout.array()).sum();
    map(i) = saved - 1e-6;
    const double down = (apply_attention(img, map).array() * dout.array()).sum();
    map(i) = saved;
    CHECK(g(i) == doctest::Approx((up - down) / 2e-6).epsilon(1e-8));
  }
}
