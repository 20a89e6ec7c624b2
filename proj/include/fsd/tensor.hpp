#pragma once

#include <Eigen/Dense>

#include <array>
#include <stdexcept>
#include <string>

namespace fsd {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Dense (batch, channels, frequency, time) activation, row-major with time
// fastest. Each sample is addressable as a (channels x frequency*time) matrix.
template <typename Scalar>
class Tensor4 {
 public:
  using SampleMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstSampleMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor4() = default;
  Tensor4(Index batch, Index channels, Index height, Index width)
      : shape_{batch, channels, height, width},
        data_(Vector<Scalar>::Zero(batch * channels * height * width)) {}

  Index batch() const { return shape_[0]; }
  Index channels() const { return shape_[1]; }
  Index height() const { return shape_[2]; }
  Index width() const { return shape_[3]; }
  Index plane() const { return shape_[2] * shape_[3]; }
  Index size() const { return data_.size(); }
  const std::array<Index, 4>& shape() const { return shape_; }

  bool same_shape(const Tensor4& other) const { return shape_ == other.shape_; }

  SampleMap sample(Index n) {
    return SampleMap(data_.data() + n * channels() * plane(), channels(), plane());
  }
  ConstSampleMap sample(Index n) const {
    return ConstSampleMap(data_.data() + n * channels() * plane(), channels(), plane());
  }

  Scalar& at(Index n, Index c, Index y, Index x) {
    return data_[((n * channels() + c) * height() + y) * width() + x];
  }
  Scalar at(Index n, Index c, Index y, Index x) const {
    return data_[((n * channels() + c) * height() + y) * width() + x];
  }

  Vector<Scalar>& data() { return data_; }
  const Vector<Scalar>& data() const { return data_; }

  void set_zero() { data_.setZero(); }

  template <typename Other>
  Tensor4<Other> cast() const {
    Tensor4<Other> out(batch(), channels(), height(), width());
    out.data() = data_.template cast<Other>();
    return out;
  }

 private:
  std::array<Index, 4> shape_{0, 0, 0, 0};
  Vector<Scalar> data_;
};

inline std::string shape_string(const std::array<Index, 4>& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) +
         "," + std::to_string(s[3]) + ")";
}

// Mean over the spatial plane of every (sample, channel): returns batch x channels.
template <typename Scalar>
RowMatrix<Scalar> global_average_pool(const Tensor4<Scalar>& x) {
  RowMatrix<Scalar> pooled(x.batch(), x.channels());
  for (Index n = 0; n < x.batch(); ++n) {
    pooled.row(n) = x.sample(n).rowwise().mean().transpose();
  }
  return pooled;
}

// Adjoint of global_average_pool: spreads d_pooled / plane over every position.
template <typename Scalar>
void accumulate_pool_gradient(const RowMatrix<Scalar>& d_pooled, Tensor4<Scalar>& dx) {
  const Scalar scale = Scalar(1) / static_cast<Scalar>(dx.plane());
  for (Index n = 0; n < dx.batch(); ++n) {
    auto s = dx.sample(n);
    s.colwise() += (d_pooled.row(n).transpose() * scale);
  }
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace fsd
