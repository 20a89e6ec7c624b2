#pragma once

#include "fsd/tensor.hpp"

#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace fsd {

enum class ParameterKind {
  kWeight,    // trained by the optimizer
  kUnitRows,  // trained, rows re-normalized to unit length after every step
  kBuffer,    // running statistic, saved but never trained
};

template <typename Scalar>
struct Parameter {
  std::string name;
  RowMatrix<Scalar> value;
  RowMatrix<Scalar> grad;
  ParameterKind kind = ParameterKind::kWeight;

  Parameter() = default;
  Parameter(std::string n, Index rows, Index cols, ParameterKind k = ParameterKind::kWeight)
      : name(std::move(n)),
        value(RowMatrix<Scalar>::Zero(rows, cols)),
        grad(RowMatrix<Scalar>::Zero(rows, cols)),
        kind(k) {}

  bool trainable() const { return kind != ParameterKind::kBuffer; }
};

template <typename Scalar>
using ParameterList = std::vector<Parameter<Scalar>*>;

template <typename Scalar>
using ConstParameterList = std::vector<const Parameter<Scalar>*>;

// 2-D convolution without bias, square kernel, zero padding.
template <typename Scalar>
class Conv2d {
 public:
  struct Cache {
    Tensor4<Scalar> input;
  };

  Conv2d() = default;
  Conv2d(const std::string& name, Index in_channels, Index out_channels, Index kernel,
         Index stride, Index padding);

  void initialize(std::mt19937_64& rng);

  Index output_extent(Index input_extent) const {
    return (input_extent + 2 * padding_ - kernel_) / stride_ + 1;
  }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Cache* cache) const;
  Tensor4<Scalar> backward(const Cache& cache, const Tensor4<Scalar>& dy);

  Index in_channels() const { return in_channels_; }
  Index out_channels() const { return out_channels_; }
  Index kernel() const { return kernel_; }
  Index stride() const { return stride_; }

  void collect(ParameterList<Scalar>& out) { out.push_back(&weight_); }
  void collect(ConstParameterList<Scalar>& out) const { out.push_back(&weight_); }

  Parameter<Scalar>& weight() { return weight_; }

 private:
  void im2col(const typename Tensor4<Scalar>::ConstSampleMap& x, Index height, Index width,
              RowMatrix<Scalar>& col) const;
  void col2im(const RowMatrix<Scalar>& col, Index height, Index width,
              typename Tensor4<Scalar>::SampleMap dx) const;

  Index in_channels_ = 0;
  Index out_channels_ = 0;
  Index kernel_ = 1;
  Index stride_ = 1;
  Index padding_ = 0;
  Parameter<Scalar> weight_;  // out_channels x (in_channels * kernel * kernel)
};

// Batch normalization over (batch, frequency, time) per channel. A non-null
// cache selects batch statistics; otherwise the running statistics are used.
template <typename Scalar>
class BatchNorm2d {
 public:
  struct Cache {
    Tensor4<Scalar> normalized;
    Vector<Scalar> inv_std;
    Vector<Scalar> batch_mean;
    Vector<Scalar> batch_var;  // biased
    Index count = 0;
  };

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, Index channels, double momentum = 0.1,
              double epsilon = 1e-5);

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Cache* cache) const;
  Tensor4<Scalar> backward(const Cache& cache, const Tensor4<Scalar>& dy);
  // Blends the batch statistics into the running ones with the layer's
  // momentum, or with `momentum` when given.
  void update_running(const Cache& cache, std::optional<double> momentum = std::nullopt);

  void collect(ParameterList<Scalar>& out);
  void collect(ConstParameterList<Scalar>& out) const;

  Parameter<Scalar>& gamma() { return gamma_; }
  Parameter<Scalar>& beta() { return beta_; }

 private:
  double momentum_ = 0.1;
  double epsilon_ = 1e-5;
  Parameter<Scalar> gamma_;
  Parameter<Scalar> beta_;
  Parameter<Scalar> running_mean_;
  Parameter<Scalar> running_var_;
};

template <typename Scalar>
Tensor4<Scalar> relu(const Tensor4<Scalar>& x);

// dy masked by (y > 0), where y is the rectifier output.
template <typename Scalar>
Tensor4<Scalar> relu_backward(const Tensor4<Scalar>& y, const Tensor4<Scalar>& dy);

// Fully connected map y = x W^T + b on batch-major rows.
template <typename Scalar>
class Linear {
 public:
  struct Cache {
    RowMatrix<Scalar> input;
  };

  Linear() = default;
  Linear(const std::string& name, Index in_features, Index out_features);

  void initialize(std::mt19937_64& rng);
  void set_identity();

  RowMatrix<Scalar> forward(const RowMatrix<Scalar>& x, Cache* cache) const;
  RowMatrix<Scalar> backward(const Cache& cache, const RowMatrix<Scalar>& dy);

  Index in_features() const { return weight_.value.cols(); }
  Index out_features() const { return weight_.value.rows(); }

  void collect(ParameterList<Scalar>& out);
  void collect(ConstParameterList<Scalar>& out) const;

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

 private:
  Parameter<Scalar> weight_;  // out x in
  Parameter<Scalar> bias_;    // 1 x out
};

// Squeeze-and-excitation gate: sigmoid(W2 relu(W1 s + b1) + b2) on pooled s.
template <typename Scalar>
class SqueezeExcite {
 public:
  struct Cache {
    typename Linear<Scalar>::Cache fc1;
    typename Linear<Scalar>::Cache fc2;
    RowMatrix<Scalar> hidden;
    RowMatrix<Scalar> gates;
  };

  SqueezeExcite() = default;
  SqueezeExcite(const std::string& name, Index channels, Index reduction);

  void initialize(std::mt19937_64& rng);

  RowMatrix<Scalar> gates(const RowMatrix<Scalar>& pooled, Cache* cache) const;
  RowMatrix<Scalar> gates_backward(const Cache& cache, const RowMatrix<Scalar>& d_gates);

  Index hidden_width() const { return fc1_.out_features(); }

  void collect(ParameterList<Scalar>& out);
  void collect(ConstParameterList<Scalar>& out) const;

  Linear<Scalar>& fc1() { return fc1_; }
  Linear<Scalar>& fc2() { return fc2_; }

 private:
  Linear<Scalar> fc1_;
  Linear<Scalar> fc2_;
};

// Channel-adaptive ECA kernel size: |log2(C)/2 + 1/2| truncated, bumped to odd.
Index eca_kernel_size(Index channels);

// Efficient channel attention gate: sigmoid of a zero-padded 1-D convolution
// across the pooled channel descriptor.
template <typename Scalar>
class EfficientChannelAttention {
 public:
  struct Cache {
    RowMatrix<Scalar> pooled;
    RowMatrix<Scalar> gates;
  };

  EfficientChannelAttention() = default;
  EfficientChannelAttention(const std::string& name, Index kernel);

  void initialize(std::mt19937_64& rng);

  RowMatrix<Scalar> gates(const RowMatrix<Scalar>& pooled, Cache* cache) const;
  RowMatrix<Scalar> gates_backward(const Cache& cache, const RowMatrix<Scalar>& d_gates);

  Index kernel() const { return weight_.value.cols(); }

  void collect(ParameterList<Scalar>& out) { out.push_back(&weight_); }
  void collect(ConstParameterList<Scalar>& out) const { out.push_back(&weight_); }

  Parameter<Scalar>& weight() { return weight_; }

 private:
  Parameter<Scalar> weight_;  // 1 x kernel
};

enum class AttentionKind { kSE, kECA };

// Channel gating block: y[n,c,:] = x[n,c,:] * gate(avgpool(x))[n,c].
template <typename Scalar>
class ChannelAttention {
 public:
  struct Cache {
    Tensor4<Scalar> input;
    RowMatrix<Scalar> gates;
    std::variant<typename SqueezeExcite<Scalar>::Cache,
                 typename EfficientChannelAttention<Scalar>::Cache>
        gate_cache;
  };

  ChannelAttention() = default;
  ChannelAttention(const std::string& name, AttentionKind kind, Index channels,
                   Index se_reduction, Index eca_kernel);

  void initialize(std::mt19937_64& rng);

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x, Cache* cache,
                          RowMatrix<Scalar>* gates_out = nullptr) const;
  Tensor4<Scalar> backward(const Cache& cache, const Tensor4<Scalar>& dy);

  AttentionKind kind() const { return kind_; }
  SqueezeExcite<Scalar>* se() { return std::get_if<SqueezeExcite<Scalar>>(&gate_); }
  EfficientChannelAttention<Scalar>* eca() {
    return std::get_if<EfficientChannelAttention<Scalar>>(&gate_);
  }

  void collect(ParameterList<Scalar>& out);
  void collect(ConstParameterList<Scalar>& out) const;

 private:
  AttentionKind kind_ = AttentionKind::kSE;
  std::variant<SqueezeExcite<Scalar>, EfficientChannelAttention<Scalar>> gate_;
};

// Angular classifier output: cosine to each class direction and embedding norm.
// Plain logits are norm * cos.
template <typename Scalar>
struct AngleOutput {
  RowMatrix<Scalar> cos;  // batch x classes
  Vector<Scalar> norm;    // batch

  RowMatrix<Scalar> logits() const { return norm.asDiagonal() * cos; }
};

// AngleLinear head. Class weight rows are kept at unit L2 norm; the forward
// pass also normalizes them explicitly so the cosine is exact off the manifold.
// A zero embedding has undefined angle and yields cos = 0.
template <typename Scalar>
class AngleLinear {
 public:
  struct Cache {
    RowMatrix<Scalar> input;
    Vector<Scalar> input_norm;
    Vector<Scalar> weight_norm;
    RowMatrix<Scalar> cos;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> clipped;
  };

  AngleLinear() = default;
  AngleLinear(const std::string& name, Index in_features, Index classes);

  void initialize(std::mt19937_64& rng);
  void normalize_rows();

  AngleOutput<Scalar> forward(const RowMatrix<Scalar>& x, Cache* cache) const;
  RowMatrix<Scalar> backward(const Cache& cache, const RowMatrix<Scalar>& d_cos,
                             const Vector<Scalar>& d_norm);

  Index in_features() const { return weight_.value.cols(); }
  Index classes() const { return weight_.value.rows(); }

  void collect(ParameterList<Scalar>& out) { out.push_back(&weight_); }
  void collect(ConstParameterList<Scalar>& out) const { out.push_back(&weight_); }

  Parameter<Scalar>& weight() { return weight_; }
  const Parameter<Scalar>& weight() const { return weight_; }

 private:
  Parameter<Scalar> weight_;  // classes x in_features
};

}  // namespace fsd
