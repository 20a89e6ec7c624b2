#include "fsd/distill.hpp"

#include "network_check.hpp"

#include <doctest.h>

#include <cmath>

using namespace fsd;
using fsd::test::fill_random;
using fsd::test::narrow_spec;

namespace {

// Eight 45x600 trials whose class shows up as a level shift of the lowest rows.
struct TinySet {
  ProtocolManifest manifest;
  MemoryFeatureSource source;
};

TinySet tiny_set(std::size_t n = 8) {
  TinySet set;
  std::mt19937_64 rng(99);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (std::size_t i = 0; i < n; ++i) {
    Trial t;
    t.speaker_id = "SPK";
    t.utterance_id = "U" + std::to_string(i);
    t.label = i % 2 == 0 ? Label::kBonafide : Label::kSpoof;
    t.system_id = i % 2 == 0 ? "-" : "S1";
    FeatureMatrix f;
    f.trial_id = t.utterance_id;
    f.values.resize(45, 600);
    for (Index k = 0; k < f.values.size(); ++k) f.values.data()[k] = normal(rng);
    if (t.label == Label::kBonafide) f.values.topRows(20).array() += 2.0f;
    set.manifest.trials.push_back(t);
    set.source.add(std::move(f));
  }
  return set;
}

DistillConfig quick_config() {
  DistillConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.seed = 4;
  return cfg;
}

}  // namespace

TEST_SUITE("distill") {

TEST_CASE("adapter of a constant map") {
  Linear<double> adapter("adapter", 4, 6);
  std::mt19937_64 rng(1);
  adapter.initialize(rng);
  Tensor4<double> f(2, 4, 3, 5);
  f.data().setConstant(1.75);
  const RowMatrix<double> out = adapter.forward(RowMatrix<double>::Constant(2, 4, 1.75), nullptr);
  CHECK(adapt_feature(f, adapter).isApprox(out, 1e-14));
}

TEST_CASE("identity adapter returns the pooled vector") {
  Linear<double> adapter("adapter", 4, 4);
  adapter.set_identity();
  std::mt19937_64 rng(2);
  Tensor4<double> f(3, 4, 2, 7);
  fill_random(f.data(), rng);
  const RowMatrix<double> out = adapt_feature(f, adapter);
  for (Index n = 0; n < 3; ++n) {
    for (Index c = 0; c < 4; ++c) {
      double mean = 0;
      for (Index y = 0; y < 2; ++y) {
        for (Index x = 0; x < 7; ++x) mean += f.at(n, c, y, x) / 14.0;
      }
      CHECK(out(n, c) == doctest::Approx(mean).epsilon(1e-13));
    }
  }
}

TEST_CASE("adapter equals pool then matrix product") {
  Linear<double> adapter("adapter", 5, 8);
  std::mt19937_64 rng(3);
  adapter.initialize(rng);
  Tensor4<double> f(2, 5, 4, 3);
  fill_random(f.data(), rng);
  const RowMatrix<double> out = adapt_feature(f, adapter);
  for (Index n = 0; n < 2; ++n) {
    std::vector<double> pooled(5, 0.0);
    for (Index c = 0; c < 5; ++c) {
      for (Index i = 0; i < 12; ++i) pooled[c] += f.sample(n)(c, i) / 12.0;
    }
    for (Index o = 0; o < 8; ++o) {
      double acc = adapter.bias().value(0, o);
      for (Index c = 0; c < 5; ++c) acc += adapter.weight().value(o, c) * pooled[c];
      CHECK(out(n, o) == doctest::Approx(acc).epsilon(1e-13));
    }
  }
  Tensor4<double> wrong(1, 4, 2, 2);
  CHECK_THROWS_AS(adapt_feature(wrong, adapter), ShapeError);
}

TEST_CASE("objective combines the three losses") {
  Network<double> net(narrow_spec(AttentionKind::kECA, 9), 5, true);
  std::mt19937_64 rng(5);
  Tensor4<double> x(4, 1, 9, 12);
  fill_random(x.data(), rng);
  const std::vector<int> labels{0, 1, 1, 0};
  ForwardTape<double> tape;
  const BlockOutputs<double> out = net.forward(x, true, &tape);

  DistillConfig cfg;
  const DistillObjective<double> obj = distill_objective(out, labels, cfg, 20.0);
  const LossBreakdown& l = obj.loss;
  CHECK(std::abs(l.total - (0.7 * l.hard + 0.3 * l.soft + 0.3 * l.feature)) < 1e-12);
  CHECK(l.hard == hard_loss(out, labels, cfg.margin, 20.0));
  CHECK(l.soft >= 0.0);
  CHECK(l.feature >= 0.0);

  cfg.alpha = 1.0;
  cfg.beta = 0.0;
  const DistillObjective<double> plain = distill_objective(out, labels, cfg, 20.0);
  CHECK(plain.loss.total == plain.loss.hard);
  for (int i = 0; i < 3; ++i) {
    CHECK(plain.grads.d_cos[i].isZero(0.0));
    CHECK(plain.grads.d_adapted[i].isZero(0.0));
  }

  const BlockOutputs<double> bare = net.forward(x, false, nullptr);
  CHECK_THROWS_AS(distill_objective(bare, labels, cfg, 20.0), std::logic_error);
}

TEST_CASE("auxiliary parameters do not touch the deepest head") {
  Network<double> net(narrow_spec(AttentionKind::kSE, 9), 6, true);
  net.set_training(false);
  std::mt19937_64 rng(6);
  Tensor4<double> x(2, 1, 9, 12);
  fill_random(x.data(), rng);
  const std::vector<int> labels{1, 0};
  const BlockOutputs<double> before = net.forward(x, true, nullptr);
  for (Parameter<double>* p : net.auxiliary_parameters()) {
    p->value.array() += 0.5;
  }
  const BlockOutputs<double> after = net.forward(x, true, nullptr);
  CHECK(before.logits(4) == after.logits(4));
  CHECK(hard_loss(before, labels, 4, 5.0) == hard_loss(after, labels, 4, 5.0));
  CHECK(before.logits(1) != after.logits(1));
}

TEST_CASE("training is deterministic and logs consistent losses") {
  const TinySet set = tiny_set();
  const NetworkSpec spec = narrow_spec(AttentionKind::kECA, 9);
  const DistillConfig cfg = quick_config();
  const TrainResult a = train(set.manifest, set.source, spec, cfg);
  const TrainResult b = train(set.manifest, set.source, spec, cfg);
  REQUIRE(a.log.size() == 2);
  CHECK(a.log[0].loss.total == b.log[0].loss.total);
  CHECK(a.log[1].loss.total == b.log[1].loss.total);
  CHECK_FALSE(a.network.training());
  CHECK(a.optimizer.steps() == 6);
  for (const EpochLog& log : a.log) {
    const LossBreakdown& l = log.loss;
    CHECK(std::abs(l.total - (cfg.alpha * l.hard + (1 - cfg.alpha) * l.soft +
                              cfg.beta * l.feature)) < 1e-6);
  }

  DistillConfig plain = cfg;
  plain.alpha = 1.0;
  plain.beta = 0.0;
  const TrainResult c = train(set.manifest, set.source, spec, plain);
  for (const EpochLog& log : c.log) {
    CHECK(log.loss.total == doctest::Approx(log.loss.hard).epsilon(1e-6));
  }
}

TEST_CASE("epoch hook sees every epoch") {
  const TinySet set = tiny_set();
  std::vector<int> seen;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& log, const Network<float>&, const Adam<float>&) {
    seen.push_back(log.epoch);
  };
  train(set.manifest, set.source, narrow_spec(AttentionKind::kECA, 9), quick_config(), hooks);
  CHECK(seen == std::vector<int>{1, 2});
}

TEST_CASE("training input checks") {
  TinySet set = tiny_set();
  const NetworkSpec spec = narrow_spec(AttentionKind::kECA, 9);
  ProtocolManifest one_class = set.manifest;
  std::erase_if(one_class.trials, [](const Trial& t) { return t.label == Label::kSpoof; });
  CHECK_THROWS_AS(train(one_class, set.source, spec, quick_config()), DataError);
  CHECK_THROWS_AS(train(ProtocolManifest{}, set.source, spec, quick_config()), DataError);

  DistillConfig bad = quick_config();
  bad.alpha = 1.5;
  CHECK_THROWS_AS(train(set.manifest, set.source, spec, bad), ConfigError);
}

TEST_CASE("evaluation") {
  const TinySet set = tiny_set();
  Network<float> net(narrow_spec(AttentionKind::kECA, 9), 3, true);
  CHECK_THROWS_AS(evaluate(net, set.manifest.trials, set.source), std::logic_error);
  net.set_training(false);
  CHECK(evaluate(net, {}, set.source).empty());
  const std::vector<ScoreRecord> scores = evaluate(net, set.manifest.trials, set.source, 3);
  REQUIRE(scores.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(scores[i].trial_id == set.manifest.trials[i].utterance_id);
    CHECK(scores[i].label == set.manifest.trials[i].label);
    // batched and single-sample float paths may round differently
    CHECK(scores[i].score ==
          doctest::Approx(infer_score(net, set.source.get(set.manifest.trials[i].utterance_id)))
              .epsilon(1e-5));
  }
}

TEST_CASE("config validation") {
  CHECK_NOTHROW(DistillConfig{}.validate());
  DistillConfig cfg;
  cfg.beta = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.n_segments = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("epoch log line") {
  EpochLog log;
  log.epoch = 3;
  log.loss = total_loss(0.5, 0.25, 0.125, 0.7, 0.3);
  log.wallclock_s = 12.3456;
  CHECK(format_epoch_log(log) == "3, 0.5, 0.25, 0.125, 0.4625, 12.346");
}

}  // TEST_SUITE
