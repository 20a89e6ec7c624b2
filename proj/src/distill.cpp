#include "fsd/distill.hpp"

#include "fsd/errors.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

namespace fsd {

void DistillConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  if (n_segments != 4) throw ConfigError("n_segments must be 4");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (margin < 1 || margin > 4) throw ConfigError("margin must lie in 1..4");
  if (!(lambda_min >= 0.0) || !(lambda_max >= lambda_min)) {
    throw ConfigError("lambda_min/lambda_max must satisfy 0 <= lambda_min <= lambda_max");
  }
  optimizer.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

template <typename Scalar>
RowMatrix<Scalar> adapt_feature(const Tensor4<Scalar>& feature, const Linear<Scalar>& adapter) {
  if (feature.channels() != adapter.in_features()) {
    throw ShapeError("adapt_feature: " + std::to_string(feature.channels()) +
                     " channels, adapter expects " + std::to_string(adapter.in_features()));
  }
  return adapter.forward(global_average_pool(feature), nullptr);
}

template <typename Scalar>
double hard_loss(const BlockOutputs<Scalar>& out, std::span<const int> labels, int margin,
                 double lambda) {
  return a_softmax_loss(out.heads[3], labels, margin, lambda).loss;
}

template <typename Scalar>
DistillObjective<Scalar> distill_objective(const BlockOutputs<Scalar>& out,
                                           std::span<const int> labels, const DistillConfig& cfg,
                                           double lambda) {
  if (!out.has_auxiliary) throw std::logic_error("distill_objective needs auxiliary outputs");
  const AngleLossResult<Scalar> hard = a_softmax_loss(out.heads[3], labels, cfg.margin, lambda);
  const std::array<RowMatrix<Scalar>, 3> shallow{out.logits(1), out.logits(2), out.logits(3)};
  const SoftLossResult<Scalar> soft = soft_loss(shallow, out.logits(4), cfg.temperature);
  const FeatureLossResult<Scalar> feature = feature_loss(out.adapted, out.embedding);

  DistillObjective<Scalar> result;
  result.loss = total_loss(hard.loss, soft.loss, feature.loss, cfg.alpha, cfg.beta);
  const auto a = static_cast<Scalar>(cfg.alpha);
  const auto soft_weight = static_cast<Scalar>(1.0 - cfg.alpha);
  const auto b = static_cast<Scalar>(cfg.beta);
  result.grads.d_cos[3] = a * hard.d_cos;
  result.grads.d_norm[3] = a * hard.d_norm;
  for (int i = 0; i < 3; ++i) {
    // logits = norm * cos, row by row
    const AngleOutput<Scalar>& head = out.heads[i];
    const RowMatrix<Scalar> d_logits = soft_weight * soft.d_logits[i];
    result.grads.d_cos[i] = head.norm.asDiagonal() * d_logits;
    result.grads.d_norm[i] = d_logits.cwiseProduct(head.cos).rowwise().sum();
    result.grads.d_adapted[i] = b * feature.d_adapted[i];
  }
  return result;
}

std::string format_epoch_log(const EpochLog& log) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d, %.9g, %.9g, %.9g, %.9g, %.3f", log.epoch, log.loss.hard,
                log.loss.soft, log.loss.feature, log.loss.total, log.wallclock_s);
  return buf;
}

void recalibrate_batch_norm(Network<float>& net, const ProtocolManifest& manifest,
                            const FeatureSource& source, std::size_t batch_size) {
  std::vector<Tensor4<float>> batches;
  for (std::size_t start = 0; start < manifest.trials.size(); start += batch_size) {
    std::vector<FeatureMatrix> features;
    const std::size_t end = std::min(manifest.trials.size(), start + batch_size);
    for (std::size_t i = start; i < end; ++i) {
      features.push_back(source.load(manifest.trials[i].utterance_id));
    }
    batches.push_back(make_batch<float>(features));
  }
  net.recalibrate_batch_norm(batches);
}

TrainResult train(const ProtocolManifest& manifest, const FeatureSource& source,
                  const NetworkSpec& spec, const DistillConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  spec.validate();
  if (manifest.trials.empty()) throw DataError("training manifest is empty");
  manifest.require_both_classes();

  const MemoryFeatureSource features = preload(manifest, source);
  TrainResult result{Network<float>(spec, cfg.seed, true),
                     Adam<float>(cfg.optimizer, cfg.learning_rate), {}};
  Network<float>& net = result.network;
  net.set_training(true);
  BatchIterator batches(manifest, features, static_cast<std::size_t>(cfg.batch_size), cfg.seed);

  long iteration = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    batches.start_epoch(static_cast<std::uint64_t>(epoch));
    LossBreakdown sum;
    std::size_t seen = 0;
    std::size_t batch_index = 0;
    while (auto batch = batches.next()) {
      ++batch_index;
      const Tensor4<float> x = make_batch<float>(batch->features);
      ForwardTape<float> tape;
      const BlockOutputs<float> out = net.forward(x, true, &tape);
      const double lambda = anneal_lambda(cfg.anneal, cfg.lambda_min, cfg.lambda_max, iteration);
      DistillObjective<float> objective;
      try {
        objective = distill_objective(out, batch->labels, cfg, lambda);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      const LossBreakdown& loss = objective.loss;
      if (!std::isfinite(loss.total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_index) + " (hard " + std::to_string(loss.hard) +
                           ", soft " + std::to_string(loss.soft) + ", feature " +
                           std::to_string(loss.feature) + ")");
      }
      net.zero_grad();
      net.backward(tape, objective.grads);
      net.update_running_stats(tape);
      result.optimizer.step(net.parameters());
      net.normalize_angle_weights();
      ++iteration;

      const double n = static_cast<double>(batch->size());
      sum.hard += n * loss.hard;
      sum.soft += n * loss.soft;
      sum.feature += n * loss.feature;
      seen += batch->size();
    }
    const double n = static_cast<double>(seen);
    EpochLog log;
    log.epoch = epoch;
    log.loss = total_loss(sum.hard / n, sum.soft / n, sum.feature / n, cfg.alpha, cfg.beta);
    log.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(log);
    if (cfg.recalibrate_bn && (hooks.on_epoch || epoch == cfg.epochs)) {
      recalibrate_batch_norm(net, manifest, features, static_cast<std::size_t>(cfg.batch_size));
    }
    if (hooks.on_epoch) hooks.on_epoch(log, net, result.optimizer);
  }
  net.set_training(false);
  return result;
}

std::vector<ScoreRecord> evaluate(const Network<float>& net, const std::vector<Trial>& trials,
                                  const FeatureSource& source, std::size_t batch_size) {
  if (net.training()) throw std::logic_error("evaluate requires a network in evaluation mode");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<ScoreRecord> records;
  records.reserve(trials.size());
  for (std::size_t start = 0; start < trials.size(); start += batch_size) {
    const std::size_t end = std::min(trials.size(), start + batch_size);
    std::vector<FeatureMatrix> features;
    for (std::size_t i = start; i < end; ++i) {
      features.push_back(source.load(trials[i].utterance_id));
      const FeatureMatrix& f = features.back();
      if (f.rows() != kSubbandBins || f.cols() != kFrameCount) {
        throw DataError("trial " + trials[i].utterance_id + ": feature shape " +
                        std::to_string(f.rows()) + "x" + std::to_string(f.cols()) +
                        ", expected 45x600");
      }
    }
    const std::vector<double> scores = infer_scores(net, make_batch<float>(features));
    for (std::size_t i = start; i < end; ++i) {
      records.push_back({trials[i].utterance_id, trials[i].label, scores[i - start]});
    }
  }
  return records;
}

#define FSD_INSTANTIATE_DISTILL(T)                                                            \
  template RowMatrix<T> adapt_feature<T>(const Tensor4<T>&, const Linear<T>&);                \
  template double hard_loss<T>(const BlockOutputs<T>&, std::span<const int>, int, double);    \
  template DistillObjective<T> distill_objective<T>(const BlockOutputs<T>&,                   \
                                                    std::span<const int>,                     \
                                                    const DistillConfig&, double);

FSD_INSTANTIATE_DISTILL(float)
FSD_INSTANTIATE_DISTILL(double)

#undef FSD_INSTANTIATE_DISTILL

}  // namespace fsd
