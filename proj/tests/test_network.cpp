#include "fsd/frontend.hpp"
#include "fsd/network.hpp"

#include "network_check.hpp"

#include <doctest.h>

using namespace fsd;
using fsd::test::check_network_gradients;
using fsd::test::narrow_spec;

namespace {

FeatureMatrix random_feature(unsigned seed, Index rows = 45, Index cols = 600) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(-2.0f, 3.0f);
  FeatureMatrix f;
  f.values.resize(rows, cols);
  for (Index i = 0; i < f.values.size(); ++i) f.values.data()[i] = normal(rng);
  return f;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("depth presets") {
  const NetworkSpec se34 = NetworkSpec::make(AttentionKind::kSE, 34);
  CHECK(se34.block_counts == std::array<int, 4>{3, 4, 6, 3});
  CHECK(se34.block_kind == BlockKind::kBasic);
  CHECK(NetworkSpec::make(AttentionKind::kECA, 9).block_counts == std::array<int, 4>{1, 1, 1, 1});
  CHECK(NetworkSpec::make(AttentionKind::kECA, 18).block_counts ==
        std::array<int, 4>{2, 2, 2, 2});

  Network<float> eca50(NetworkSpec::make(AttentionKind::kECA, 50), 0, false);
  for (int block = 1; block <= 4; ++block) {
    for (const auto& unit : eca50.stage(block)) {
      REQUIRE(unit.convs().size() == 3);
      CHECK(unit.convs()[0].kernel() == 1);
      CHECK(unit.convs()[1].kernel() == 3);
      CHECK(unit.convs()[2].kernel() == 1);
    }
  }
  CHECK_THROWS_AS(NetworkSpec::make(AttentionKind::kSE, 20), std::invalid_argument);
}

TEST_CASE("block output shapes for every preset") {
  const std::array<std::array<Index, 3>, 4> expected{
      {{32, 45, 600}, {64, 23, 300}, {128, 12, 150}, {256, 6, 75}}};
  for (AttentionKind kind : {AttentionKind::kSE, AttentionKind::kECA}) {
    for (int depth : {9, 18, 34, 50}) {
      const NetworkSpec spec = NetworkSpec::make(kind, depth);
      for (int b = 0; b < 4; ++b) CHECK(block_output_shape(spec, b + 1, 45, 600) == expected[b]);
    }
  }

  Network<float> net(NetworkSpec::make(AttentionKind::kECA, 9), 1, true);
  net.set_training(false);
  const BlockOutputs<float> out = forward_backbone(net, random_feature(1));
  for (int b = 0; b < 4; ++b) {
    CHECK(out.features[b].shape() ==
          std::array<Index, 4>{1, expected[b][0], expected[b][1], expected[b][2]});
  }
  CHECK(out.logits(4).rows() == 1);
  CHECK(out.logits(4).cols() == 2);
  CHECK_FALSE(out.has_auxiliary);
}

TEST_CASE("parameter count grows with depth") {
  for (AttentionKind kind : {AttentionKind::kSE, AttentionKind::kECA}) {
    std::size_t previous = 0;
    for (int depth : {9, 18, 34, 50}) {
      const Network<float> net(NetworkSpec::make(kind, depth), 0, false);
      const std::size_t count = net.parameter_count(false);
      CHECK(count > previous);
      previous = count;
    }
  }
  const Network<float> with_aux(NetworkSpec::make(AttentionKind::kECA, 9), 0, true);
  CHECK(with_aux.parameter_count(true) > with_aux.parameter_count(false));
}

TEST_CASE("same seed and input give identical outputs") {
  const NetworkSpec spec = NetworkSpec::make(AttentionKind::kSE, 9);
  Network<float> a(spec, 42, true);
  Network<float> b(spec, 42, true);
  Network<float> c(spec, 43, true);
  for (auto* net : {&a, &b, &c}) net->set_training(false);
  const FeatureMatrix x = random_feature(2);
  const BlockOutputs<float> ya = forward_backbone(a, x, true);
  const BlockOutputs<float> yb = forward_backbone(b, x, true);
  for (int i = 0; i < 4; ++i) {
    CHECK(ya.features[i].data() == yb.features[i].data());
    CHECK(ya.heads[i].cos == yb.heads[i].cos);
  }
  CHECK(ya.logits(4) != forward_backbone(c, x, true).logits(4));
}

TEST_CASE("input shape is enforced") {
  Network<float> net(NetworkSpec::make(AttentionKind::kECA, 9), 1, false);
  net.set_training(false);
  CHECK_THROWS_AS(forward_backbone(net, random_feature(3, 45, 599)), ShapeError);
  CHECK_THROWS_AS(net.forward(Tensor4<float>(1, 2, 45, 600), false, nullptr), ShapeError);
}

TEST_CASE("scores from logits") {
  RowMatrix<double> logits(2, 2);
  logits << 2.0, -1.0, 0.5, 0.5;
  CHECK(score_from_logits(logits, 0) == 3.0);
  CHECK(score_from_logits(logits, 1) == 0.0);
}

TEST_CASE("inference needs evaluation mode and ignores auxiliary heads") {
  Network<float> net(NetworkSpec::make(AttentionKind::kECA, 9), 5, true);
  const FeatureMatrix x = random_feature(4);
  CHECK_THROWS_AS(infer_score(net, x), std::logic_error);
  net.set_training(false);
  const double with_aux = infer_score(net, x);
  net.strip_auxiliary();
  CHECK_FALSE(net.has_auxiliary());
  CHECK(infer_score(net, x) == with_aux);
}

TEST_CASE("network gradients of a narrow net") {
  for (AttentionKind kind : {AttentionKind::kSE, AttentionKind::kECA}) {
    const auto report = check_network_gradients(narrow_spec(kind, 9), 7, 6, 8, 6);
    CAPTURE(report.worst_name);
    CHECK(report.worst < 1e-4);
  }
  const auto bottleneck = check_network_gradients(narrow_spec(AttentionKind::kECA, 50), 8, 6, 8, 3);
  CAPTURE(bottleneck.worst_name);
  CHECK(bottleneck.worst < 1e-4);
}

TEST_CASE("batch-norm recalibration uses the plain batch mean") {
  NetworkSpec spec = narrow_spec(AttentionKind::kECA, 9);
  Network<double> net(spec, 9, false);
  std::mt19937_64 rng(10);
  std::vector<Tensor4<double>> batches(3, Tensor4<double>(2, 1, 6, 8));
  for (auto& b : batches) fsd::test::fill_random(b.data(), rng);
  net.recalibrate_batch_norm(batches);

  // running mean of the stem equals the mean of the three batch means
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(spec.stem_channels);
  for (const auto& b : batches) {
    ForwardTape<double> tape;
    net.forward(b, false, &tape);
    expected += tape.stem_bn.batch_mean / 3.0;
  }
  const Parameter<double>* running = nullptr;
  for (const auto* p : std::as_const(net).parameters()) {
    if (p->name == "stem.bn.running_mean") running = p;
  }
  REQUIRE(running != nullptr);
  CHECK((running->value.row(0).transpose() - expected).cwiseAbs().maxCoeff() < 1e-12);
}

}  // TEST_SUITE
