#pragma once

#include "fsd/data.hpp"
#include "fsd/losses.hpp"
#include "fsd/metrics.hpp"
#include "fsd/network.hpp"
#include "fsd/optim.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fsd {

struct DistillConfig {
  double alpha = 0.7;
  double beta = 0.3;
  int n_segments = 4;
  double temperature = 1.0;
  int margin = 4;
  bool anneal = true;  // lambda schedule of the margin blend; off means the pure margin target
  double lambda_min = 5.0;
  double lambda_max = 1500.0;
  AdamConfig optimizer;
  int epochs = 32;
  double learning_rate = 1e-3;
  int batch_size = 32;
  std::uint64_t seed = 0;
  // Recompute batch-norm running statistics over the training set with the
  // final weights (and before every epoch hook).
  bool recalibrate_bn = true;

  void validate() const;

  bool operator==(const DistillConfig&) const = default;
};

// Pooled block output mapped through the branch adapter.
template <typename Scalar>
RowMatrix<Scalar> adapt_feature(const Tensor4<Scalar>& feature, const Linear<Scalar>& adapter);

template <typename Scalar>
struct DistillObjective {
  LossBreakdown loss;
  OutputGradients<Scalar> grads;
};

// Hard loss on the deepest head, soft loss of the shallow heads against the
// detached deepest distribution, feature loss of the adapted shallow vectors
// against the detached embedding, combined with the configured weights.
// Requires outputs produced with auxiliary heads.
template <typename Scalar>
DistillObjective<Scalar> distill_objective(const BlockOutputs<Scalar>& out,
                                           std::span<const int> labels, const DistillConfig& cfg,
                                           double lambda);

// Batch-mean A-softmax loss of the deepest head.
template <typename Scalar>
double hard_loss(const BlockOutputs<Scalar>& out, std::span<const int> labels, int margin,
                 double lambda);

struct EpochLog {
  int epoch = 0;
  LossBreakdown loss;  // sample-weighted means over the epoch
  double wallclock_s = 0.0;
};

// "epoch, hard, soft, feature, total, wallclock_s"
std::string format_epoch_log(const EpochLog& log);

struct TrainHooks {
  std::function<void(const EpochLog&, const Network<float>&, const Adam<float>&)> on_epoch;
};

struct TrainResult {
  Network<float> network;
  Adam<float> optimizer;
  std::vector<EpochLog> log;
};

// Sets every running statistic to the mean batch statistics of the manifest,
// taken in manifest order with the given batch size.
void recalibrate_batch_norm(Network<float>& net, const ProtocolManifest& manifest,
                            const FeatureSource& source, std::size_t batch_size);

// Self-distillation training. Deterministic for a fixed cfg.seed: the seed
// drives weight initialization and the per-epoch batch order.
TrainResult train(const ProtocolManifest& manifest, const FeatureSource& source,
                  const NetworkSpec& spec, const DistillConfig& cfg, const TrainHooks& hooks = {});

// One score per trial from the deepest head. The network must be in
// evaluation mode; auxiliary heads are ignored whether attached or not.
std::vector<ScoreRecord> evaluate(const Network<float>& net, const std::vector<Trial>& trials,
                                  const FeatureSource& source, std::size_t batch_size = 16);

}  // namespace fsd
