#pragma once

#include "fsd/layers.hpp"
#include "fsd/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fsd {

struct FeatureMatrix;

enum class BlockKind { kBasic, kBottleneck };

// Architecture description. Depth fixes the per-stage unit counts and the
// unit kind; the channel plan is overridable so tests can build narrow nets.
struct NetworkSpec {
  AttentionKind attention = AttentionKind::kECA;
  int depth = 9;
  std::array<int, 4> block_counts{1, 1, 1, 1};
  BlockKind block_kind = BlockKind::kBasic;
  std::array<int, 4> channel_plan{32, 64, 128, 256};
  int stem_channels = 16;
  int se_reduction = 16;
  int eca_kernel = 0;        // 0 selects the channel-adaptive size per stage
  int bottleneck_width = 2;  // inner width of 1-3-1 units as a multiple of the stage width
  int num_classes = 2;

  // Depth 9/18/34 use basic units with (1,1,1,1)/(2,2,2,2)/(3,4,6,3); depth 50
  // uses (3,4,6,3) bottleneck units.
  static NetworkSpec make(AttentionKind attention, int depth);

  void validate() const;
  int embedding_dim() const { return channel_plan[3]; }

  bool operator==(const NetworkSpec&) const = default;
};

std::string to_string(AttentionKind kind);
std::string to_string(BlockKind kind);
AttentionKind parse_attention(const std::string& text);
BlockKind parse_block_kind(const std::string& text);

// Stage strides; stride-2 3x3 convs with padding 1 take 45x600 to 23x300,
// 12x150 and 6x75.
inline constexpr std::array<int, 4> kStageStrides{1, 2, 2, 2};

// Shape of block i's output (channels, frequency, time) for an input of the
// given frequency/time extent.
std::array<Index, 3> block_output_shape(const NetworkSpec& spec, int block, Index height,
                                        Index width);

// One residual unit: conv-BN-ReLU stack (two 3x3, or 1-3-1 bottleneck),
// channel attention on the residual branch, projection shortcut when the
// shape changes, rectifier after the sum.
template <typename Scalar>
class ResidualUnit {
 public:
  struct Cache {
    std::vector<typename Conv2d<Scalar>::Cache> conv;
    std::vector<typename BatchNorm2d<Scalar>::Cache> bn;
    std::vector<Tensor4<Scalar>> relu_out;
    typename ChannelAttention<Scalar>::Cache attention;
    typename Conv2d<Scalar>::Cache shortcut_conv;
    typename BatchNorm2d<Scalar>::Cache shortcut_bn;
    Tensor4<Scalar> output;
  };

  ResidualUnit() = default;
  ResidualUnit(const std::string& name, const NetworkSpec& spec, Index in_channels,
               Index out_channels, Index stride);

  void initialize(std::mt19937_64& rng);

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Cache* cache,
                          RowMatrix<Scalar>* gates_out = nullptr) const;
  Tensor4<Scalar> backward(const Cache& cache, const Tensor4<Scalar>& dy);
  void update_running(const Cache& cache, std::optional<double> momentum = std::nullopt);

  bool has_projection() const { return shortcut_conv_.has_value(); }
  const std::vector<Conv2d<Scalar>>& convs() const { return convs_; }
  ChannelAttention<Scalar>& attention() { return attention_; }

  void collect(ParameterList<Scalar>& out);
  void collect(ConstParameterList<Scalar>& out) const;

 private:
  std::vector<Conv2d<Scalar>> convs_;
  std::vector<BatchNorm2d<Scalar>> bns_;
  ChannelAttention<Scalar> attention_;
  std::optional<Conv2d<Scalar>> shortcut_conv_;
  std::optional<BatchNorm2d<Scalar>> shortcut_bn_;
};

// Training-only classifier attached to a shallow block: pooled block output
// -> linear map to the embedding width -> AngleLinear.
template <typename Scalar>
struct AuxiliaryBranch {
  Linear<Scalar> adapter;
  AngleLinear<Scalar> head;

  struct Cache {
    typename Linear<Scalar>::Cache adapter;
    typename AngleLinear<Scalar>::Cache head;
  };
};

template <typename Scalar>
struct BlockOutputs {
  std::array<Tensor4<Scalar>, 4> features;    // F^1..F^4
  RowMatrix<Scalar> embedding;                 // pooled F^4, batch x embedding_dim
  std::array<AngleOutput<Scalar>, 4> heads;    // p^1..p^4; the first three only with aux
  std::array<RowMatrix<Scalar>, 3> adapted;    // adapter outputs for blocks 1..3
  bool has_auxiliary = false;

  // Plain angular logits ||x|| cos(theta) of block 1..4.
  RowMatrix<Scalar> logits(int block) const { return heads[block - 1].logits(); }
};

// Everything backward() needs from one training forward pass.
template <typename Scalar>
struct ForwardTape {
  typename Conv2d<Scalar>::Cache stem_conv;
  typename BatchNorm2d<Scalar>::Cache stem_bn;
  Tensor4<Scalar> stem_out;
  std::array<std::vector<typename ResidualUnit<Scalar>::Cache>, 4> units;
  typename AngleLinear<Scalar>::Cache head;
  std::array<typename AuxiliaryBranch<Scalar>::Cache, 3> aux;
  std::array<Index, 4> feature_planes{};
  bool has_auxiliary = false;
};

// Loss gradients with respect to the network outputs. Empty matrices mean zero.
template <typename Scalar>
struct OutputGradients {
  std::array<RowMatrix<Scalar>, 4> d_cos;
  std::array<Vector<Scalar>, 4> d_norm;
  std::array<RowMatrix<Scalar>, 3> d_adapted;
  RowMatrix<Scalar> d_embedding;
};

template <typename Scalar>
class Network {
 public:
  Network() = default;
  Network(const NetworkSpec& spec, std::uint64_t seed, bool with_auxiliary = true);

  const NetworkSpec& spec() const { return spec_; }

  bool has_auxiliary() const { return !aux_.empty(); }
  void strip_auxiliary() { aux_.clear(); }
  void attach_auxiliary(std::uint64_t seed);

  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }

  // A non-null tape selects training behavior (batch statistics) and records
  // the caches for backward(). Auxiliary heads run only when requested and
  // attached; they read block outputs and feed nothing back.
  BlockOutputs<Scalar> forward(const Tensor4<Scalar>& x, bool with_auxiliary,
                               ForwardTape<Scalar>* tape) const;

  // Accumulates parameter gradients for the pass recorded in tape.
  void backward(const ForwardTape<Scalar>& tape, const OutputGradients<Scalar>& grads);

  void update_running_stats(const ForwardTape<Scalar>& tape,
                            std::optional<double> momentum = std::nullopt);

  // Replaces every running statistic by the average of the batch statistics
  // over `batches`, computed with the current weights.
  void recalibrate_batch_norm(std::span<const Tensor4<Scalar>> batches);

  void zero_grad();
  void normalize_angle_weights();

  ParameterList<Scalar> parameters();
  ConstParameterList<Scalar> parameters() const;
  ParameterList<Scalar> auxiliary_parameters();

  // Number of trainable scalars.
  std::size_t parameter_count(bool include_auxiliary) const;

  AngleLinear<Scalar>& head() { return head_; }
  AuxiliaryBranch<Scalar>& auxiliary(int block) { return aux_.at(block - 1); }
  std::vector<ResidualUnit<Scalar>>& stage(int block) { return stages_.at(block - 1); }
  const std::vector<ResidualUnit<Scalar>>& stage(int block) const {
    return stages_.at(block - 1);
  }

  // Attention gates of every unit for input x, in evaluation mode.
  std::vector<RowMatrix<Scalar>> attention_gates(const Tensor4<Scalar>& x) const;

 private:
  void build(std::mt19937_64* rng, bool with_auxiliary);
  AuxiliaryBranch<Scalar> make_branch(int block) const;

  NetworkSpec spec_;
  bool training_ = true;
  Conv2d<Scalar> stem_conv_;
  BatchNorm2d<Scalar> stem_bn_;
  std::array<std::vector<ResidualUnit<Scalar>>, 4> stages_;
  AngleLinear<Scalar> head_;
  std::vector<AuxiliaryBranch<Scalar>> aux_;
};

// Adds the leading channel axis: n matrices of F x T become (n, 1, F, T).
template <typename Scalar>
Tensor4<Scalar> make_batch(std::span<const FeatureMatrix> features);

// Forward pass of one 45x600 feature with the shape contract enforced.
template <typename Scalar>
BlockOutputs<Scalar> forward_backbone(const Network<Scalar>& net, const FeatureMatrix& x,
                                      bool with_auxiliary = false);

// Countermeasure score from the deepest head: logit(bonafide) - logit(spoof).
template <typename Scalar>
double score_from_logits(const RowMatrix<Scalar>& logits, Index row);

// Requires evaluation mode; auxiliary heads are never evaluated.
template <typename Scalar>
double infer_score(const Network<Scalar>& net, const FeatureMatrix& x);

template <typename Scalar>
std::vector<double> infer_scores(const Network<Scalar>& net, const Tensor4<Scalar>& batch);

}  // namespace fsd
