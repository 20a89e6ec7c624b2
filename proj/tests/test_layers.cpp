#include "fsd/layers.hpp"

#include "gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace fsd;
using fsd::test::fill_random;
using fsd::test::max_relative_error;

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Tensor4<double> random_tensor(Index n, Index c, Index h, Index w, std::mt19937_64& rng) {
  Tensor4<double> t(n, c, h, w);
  fill_random(t.data(), rng);
  return t;
}

double dot(const Tensor4<double>& a, const Tensor4<double>& b) {
  return a.data().dot(b.data());
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("SE with zero weights halves the input") {
  ChannelAttention<double> att("att", AttentionKind::kSE, 8, 4, 0);
  std::mt19937_64 rng(1);
  const Tensor4<double> x = random_tensor(2, 8, 3, 5, rng);
  RowMatrix<double> gates;
  const Tensor4<double> y = att.forward(x, nullptr, &gates);
  CHECK((gates.array() == 0.5).all());
  CHECK(y.data() == 0.5 * x.data());
}

TEST_CASE("SE on a 2-channel map matches a hand computation") {
  ChannelAttention<double> att("att", AttentionKind::kSE, 2, 2, 0);
  SqueezeExcite<double>& se = *att.se();
  REQUIRE(se.hidden_width() == 1);
  se.fc1().weight().value << 0.4, -0.2;
  se.fc1().bias().value << 0.1;
  se.fc2().weight().value << 0.5, -1.0;
  se.fc2().bias().value << 0.0, 0.3;

  Tensor4<double> x(1, 2, 2, 2);
  x.data() << 1, 2, 3, 4, -1, 0, 1, -4;
  // pooled (2.5, -1); hidden relu(1.0 + 0.2 + 0.1) = 1.3; logits (0.65, -1.0)
  const double g0 = logistic(0.65);
  const double g1 = logistic(-1.0);
  RowMatrix<double> gates;
  const Tensor4<double> y = att.forward(x, nullptr, &gates);
  CHECK(gates(0, 0) == doctest::Approx(g0).epsilon(1e-15));
  CHECK(gates(0, 1) == doctest::Approx(g1).epsilon(1e-15));
  for (int i = 0; i < 4; ++i) {
    CHECK(y.data()[i] == doctest::Approx(g0 * x.data()[i]).epsilon(1e-15));
    CHECK(y.data()[4 + i] == doctest::Approx(g1 * x.data()[4 + i]).epsilon(1e-15));
  }
}

TEST_CASE("gates lie in (0, 1) and scale whole channels") {
  std::mt19937_64 rng(2);
  for (AttentionKind kind : {AttentionKind::kSE, AttentionKind::kECA}) {
    ChannelAttention<double> att("att", kind, 32, 16, 0);
    att.initialize(rng);
    const Tensor4<double> x = random_tensor(3, 32, 4, 6, rng);
    RowMatrix<double> gates;
    const Tensor4<double> y = att.forward(x, nullptr, &gates);
    CHECK((gates.array() > 0.0).all());
    CHECK((gates.array() < 1.0).all());
    for (Index n = 0; n < 3; ++n) {
      for (Index c = 0; c < 32; ++c) {
        const Eigen::RowVectorXd ratio = y.sample(n).row(c).array() / x.sample(n).row(c).array();
        REQUIRE((ratio.array() - gates(n, c)).abs().maxCoeff() < 1e-12);
      }
    }
  }
}

TEST_CASE("ECA with a zero kernel gives half gates") {
  ChannelAttention<double> att("att", AttentionKind::kECA, 16, 16, 1);
  REQUIRE(att.eca()->kernel() == 1);
  std::mt19937_64 rng(3);
  RowMatrix<double> gates;
  att.forward(random_tensor(2, 16, 3, 3, rng), nullptr, &gates);
  CHECK((gates.array() == 0.5).all());
}

TEST_CASE("ECA on 4 channels matches a manual convolution") {
  ChannelAttention<double> att("att", AttentionKind::kECA, 4, 16, 3);
  att.eca()->weight().value << 0.2, -0.5, 1.0;
  Tensor4<double> x(1, 4, 1, 2);
  x.data() << 1, 3, -2, 0, 4, 4, 0.5, -1.5;
  const double p[4] = {2, -1, 4, -0.5};
  const double z[4] = {-0.5 * p[0] + 1.0 * p[1],
                       0.2 * p[0] - 0.5 * p[1] + 1.0 * p[2],
                       0.2 * p[1] - 0.5 * p[2] + 1.0 * p[3],
                       0.2 * p[2] - 0.5 * p[3]};
  RowMatrix<double> gates;
  att.forward(x, nullptr, &gates);
  for (int c = 0; c < 4; ++c) CHECK(gates(0, c) == doctest::Approx(logistic(z[c])).epsilon(1e-15));
}

TEST_CASE("ECA gates ignore the spatial arrangement") {
  std::mt19937_64 rng(4);
  ChannelAttention<double> att("att", AttentionKind::kECA, 64, 16, 0);
  att.initialize(rng);
  const Tensor4<double> x = random_tensor(2, 64, 3, 4, rng);
  std::vector<Index> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor4<double> shuffled(2, 64, 3, 4);
  for (Index n = 0; n < 2; ++n) {
    for (Index j = 0; j < 12; ++j) shuffled.sample(n).col(j) = x.sample(n).col(perm[j]);
  }
  RowMatrix<double> a, b;
  att.forward(x, nullptr, &a);
  att.forward(shuffled, nullptr, &b);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ECA kernel size") {
  CHECK(eca_kernel_size(32) == 3);
  CHECK(eca_kernel_size(64) == 3);
  CHECK(eca_kernel_size(128) == 5);
  CHECK(eca_kernel_size(256) == 5);
  CHECK_THROWS_AS(EfficientChannelAttention<double>("eca", 4), std::invalid_argument);
  CHECK_THROWS_AS(EfficientChannelAttention<double>("eca", 0), std::invalid_argument);
}

TEST_CASE("convolution matches a direct sum") {
  std::mt19937_64 rng(5);
  Conv2d<double> conv("conv", 2, 3, 3, 2, 1);
  conv.initialize(rng);
  const Tensor4<double> x = random_tensor(2, 2, 5, 7, rng);
  const Tensor4<double> y = conv.forward(x, nullptr);
  REQUIRE(y.shape() == std::array<Index, 4>{2, 3, 3, 4});
  CHECK(conv.output_extent(45) == 23);
  CHECK(conv.output_extent(600) == 300);
  const auto& w = conv.weight().value;
  for (Index n = 0; n < 2; ++n) {
    for (Index o = 0; o < 3; ++o) {
      for (Index oy = 0; oy < 3; ++oy) {
        for (Index ox = 0; ox < 4; ++ox) {
          double acc = 0;
          for (Index c = 0; c < 2; ++c) {
            for (Index ky = 0; ky < 3; ++ky) {
              for (Index kx = 0; kx < 3; ++kx) {
                const Index iy = oy * 2 - 1 + ky;
                const Index ix = ox * 2 - 1 + kx;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 7) continue;
                acc += w(o, (c * 3 + ky) * 3 + kx) * x.at(n, c, iy, ix);
              }
            }
          }
          REQUIRE(y.at(n, o, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("layer gradients match finite differences") {
  std::mt19937_64 rng(6);

  SUBCASE("conv") {
    Conv2d<double> conv("conv", 2, 3, 3, 2, 1);
    conv.initialize(rng);
    Tensor4<double> x = random_tensor(2, 2, 5, 6, rng);
    Tensor4<double> probe = random_tensor(2, 3, 3, 3, rng);
    typename Conv2d<double>::Cache cache;
    conv.forward(x, &cache);
    const Tensor4<double> dx = conv.backward(cache, probe);
    auto loss = [&] { return dot(conv.forward(x, nullptr), probe); };
    CHECK(max_relative_error(conv.weight(), loss) < 1e-6);
    CHECK(max_relative_error(x.data().data(), dx.data().data(), x.size(), loss) < 1e-6);
  }

  SUBCASE("batch norm in training mode") {
    BatchNorm2d<double> bn("bn", 3);
    fill_random(bn.gamma().value, rng);
    fill_random(bn.beta().value, rng);
    Tensor4<double> x = random_tensor(2, 3, 2, 3, rng);
    Tensor4<double> probe = random_tensor(2, 3, 2, 3, rng);
    typename BatchNorm2d<double>::Cache cache;
    bn.forward(x, &cache);
    const Tensor4<double> dx = bn.backward(cache, probe);
    auto loss = [&] {
      typename BatchNorm2d<double>::Cache c;
      return dot(bn.forward(x, &c), probe);
    };
    CHECK(max_relative_error(bn.gamma(), loss) < 1e-6);
    CHECK(max_relative_error(bn.beta(), loss) < 1e-6);
    CHECK(max_relative_error(x.data().data(), dx.data().data(), x.size(), loss) < 1e-5);
  }

  SUBCASE("channel attention") {
    for (AttentionKind kind : {AttentionKind::kSE, AttentionKind::kECA}) {
      ChannelAttention<double> att("att", kind, 8, 4, 3);
      att.initialize(rng);
      Tensor4<double> x = random_tensor(2, 8, 3, 2, rng);
      Tensor4<double> probe = random_tensor(2, 8, 3, 2, rng);
      typename ChannelAttention<double>::Cache cache;
      att.forward(x, &cache);
      const Tensor4<double> dx = att.backward(cache, probe);
      auto loss = [&] { return dot(att.forward(x, nullptr), probe); };
      ParameterList<double> params;
      att.collect(params);
      for (Parameter<double>* p : params) {
        CAPTURE(p->name);
        CHECK(max_relative_error(*p, loss) < 1e-6);
      }
      CHECK(max_relative_error(x.data().data(), dx.data().data(), x.size(), loss) < 1e-6);
    }
  }

  SUBCASE("angle linear") {
    AngleLinear<double> head("head", 5, 2);
    head.initialize(rng);
    RowMatrix<double> x(3, 5);
    fill_random(x, rng);
    RowMatrix<double> probe_cos(3, 2);
    Vector<double> probe_norm(3);
    fill_random(probe_cos, rng);
    fill_random(probe_norm, rng);
    typename AngleLinear<double>::Cache cache;
    head.forward(x, &cache);
    const RowMatrix<double> dx = head.backward(cache, probe_cos, probe_norm);
    auto loss = [&] {
      const AngleOutput<double> out = head.forward(x, nullptr);
      return out.cos.cwiseProduct(probe_cos).sum() + out.norm.dot(probe_norm);
    };
    CHECK(max_relative_error(head.weight(), loss) < 1e-6);
    CHECK(max_relative_error(x.data(), dx.data(), x.size(), loss) < 1e-6);
  }
}

TEST_CASE("angle linear geometry") {
  AngleLinear<double> head("head", 3, 2);
  head.weight().value << 3, 0, 4, 0, 2, 0;
  head.normalize_rows();
  CHECK(head.weight().value.row(0).norm() == doctest::Approx(1.0));
  CHECK(head.weight().value.row(1).norm() == doctest::Approx(1.0));

  RowMatrix<double> x(2, 3);
  x << 6, 0, 8, 0, 0, 0;
  const AngleOutput<double> out = head.forward(x, nullptr);
  CHECK(out.cos(0, 0) == doctest::Approx(1.0));
  CHECK(out.cos(0, 1) == doctest::Approx(0.0));
  CHECK(out.norm[0] == doctest::Approx(10.0));
  CHECK(out.logits()(0, 0) == doctest::Approx(10.0));
  CHECK(out.cos(1, 0) == 0.0);
  CHECK(out.cos(1, 1) == 0.0);
  CHECK(out.norm[1] == 0.0);
}

}  // TEST_SUITE
