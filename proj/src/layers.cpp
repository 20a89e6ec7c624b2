#include "fsd/layers.hpp"

#include <cmath>

namespace fsd {

namespace {

template <typename Scalar>
void fill_normal(RowMatrix<Scalar>& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
}

template <typename Scalar>
void fill_uniform(RowMatrix<Scalar>& m, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  return Scalar(1) / (Scalar(1) + std::exp(-z));
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename Scalar>
Conv2d<Scalar>::Conv2d(const std::string& name, Index in_channels, Index out_channels,
                       Index kernel, Index stride, Index padding)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      weight_(name + ".weight", out_channels, in_channels * kernel * kernel) {}

template <typename Scalar>
void Conv2d<Scalar>::initialize(std::mt19937_64& rng) {
  // He initialization in fan-out mode.
  const double fan_out = static_cast<double>(out_channels_ * kernel_ * kernel_);
  fill_normal(weight_.value, std::sqrt(2.0 / fan_out), rng);
}

template <typename Scalar>
void Conv2d<Scalar>::im2col(const typename Tensor4<Scalar>::ConstSampleMap& x, Index height,
                            Index width, RowMatrix<Scalar>& col) const {
  const Index out_h = output_extent(height);
  const Index out_w = output_extent(width);
  col.resize(in_channels_ * kernel_ * kernel_, out_h * out_w);
  for (Index c = 0; c < in_channels_; ++c) {
    const Scalar* plane = x.data() + c * height * width;
    for (Index ky = 0; ky < kernel_; ++ky) {
      for (Index kx = 0; kx < kernel_; ++kx) {
        Scalar* dst = col.data() + ((c * kernel_ + ky) * kernel_ + kx) * out_h * out_w;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride_ - padding_ + ky;
          Scalar* row = dst + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * width;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride_ - padding_ + kx;
            row[ox] = (ix >= 0 && ix < width) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void Conv2d<Scalar>::col2im(const RowMatrix<Scalar>& col, Index height, Index width,
                            typename Tensor4<Scalar>::SampleMap dx) const {
  const Index out_h = output_extent(height);
  const Index out_w = output_extent(width);
  for (Index c = 0; c < in_channels_; ++c) {
    Scalar* plane = dx.data() + c * height * width;
    for (Index ky = 0; ky < kernel_; ++ky) {
      for (Index kx = 0; kx < kernel_; ++kx) {
        const Scalar* src = col.data() + ((c * kernel_ + ky) * kernel_ + kx) * out_h * out_w;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index iy = oy * stride_ - padding_ + ky;
          if (iy < 0 || iy >= height) continue;
          Scalar* dst = plane + iy * width;
          const Scalar* row = src + oy * out_w;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index ix = ox * stride_ - padding_ + kx;
            if (ix >= 0 && ix < width) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
Tensor4<Scalar> Conv2d<Scalar>::forward(const Tensor4<Scalar>& x, Cache* cache) const {
  if (x.channels() != in_channels_) {
    throw ShapeError(weight_.name + ": expected " + std::to_string(in_channels_) +
                     " input channels, got " + std::to_string(x.channels()));
  }
  const bool pointwise = kernel_ == 1 && stride_ == 1 && padding_ == 0;
  Tensor4<Scalar> y(x.batch(), out_channels_, output_extent(x.height()),
                    output_extent(x.width()));
  RowMatrix<Scalar> col;
  for (Index n = 0; n < x.batch(); ++n) {
    if (pointwise) {
      y.sample(n).noalias() = weight_.value * x.sample(n);
    } else {
      im2col(x.sample(n), x.height(), x.width(), col);
      y.sample(n).noalias() = weight_.value * col;
    }
  }
  if (cache) cache->input = x;
  return y;
}

template <typename Scalar>
Tensor4<Scalar> Conv2d<Scalar>::backward(const Cache& cache, const Tensor4<Scalar>& dy) {
  const Tensor4<Scalar>& x = cache.input;
  const bool pointwise = kernel_ == 1 && stride_ == 1 && padding_ == 0;
  Tensor4<Scalar> dx(x.batch(), x.channels(), x.height(), x.width());
  RowMatrix<Scalar> col;
  RowMatrix<Scalar> dcol;
  for (Index n = 0; n < x.batch(); ++n) {
    if (pointwise) {
      weight_.grad.noalias() += dy.sample(n) * x.sample(n).transpose();
      dx.sample(n).noalias() = weight_.value.transpose() * dy.sample(n);
    } else {
      im2col(x.sample(n), x.height(), x.width(), col);
      weight_.grad.noalias() += dy.sample(n) * col.transpose();
      dcol.noalias() = weight_.value.transpose() * dy.sample(n);
      col2im(dcol, x.height(), x.width(), dx.sample(n));
    }
  }
  return dx;
}

// ----------------------------------------------------------- BatchNorm2d

template <typename Scalar>
BatchNorm2d<Scalar>::BatchNorm2d(const std::string& name, Index channels, double momentum,
                                 double epsilon)
    : momentum_(momentum),
      epsilon_(epsilon),
      gamma_(name + ".gamma", 1, channels),
      beta_(name + ".beta", 1, channels),
      running_mean_(name + ".running_mean", 1, channels, ParameterKind::kBuffer),
      running_var_(name + ".running_var", 1, channels, ParameterKind::kBuffer) {
  gamma_.value.setOnes();
  running_var_.value.setOnes();
}

template <typename Scalar>
Tensor4<Scalar> BatchNorm2d<Scalar>::forward(const Tensor4<Scalar>& x, Cache* cache) const {
  const Index channels = x.channels();
  if (channels != gamma_.value.cols()) {
    throw ShapeError(gamma_.name + ": channel count mismatch");
  }
  Tensor4<Scalar> y(x.batch(), channels, x.height(), x.width());
  Vector<Scalar> mean;
  Vector<Scalar> inv_std;
  if (cache) {
    const Index count = x.batch() * x.plane();
    mean = Vector<Scalar>::Zero(channels);
    for (Index n = 0; n < x.batch(); ++n) mean += x.sample(n).rowwise().sum();
    mean /= static_cast<Scalar>(count);
    Vector<Scalar> var = Vector<Scalar>::Zero(channels);
    for (Index n = 0; n < x.batch(); ++n) {
      var += (x.sample(n).colwise() - mean).array().square().matrix().rowwise().sum();
    }
    var /= static_cast<Scalar>(count);
    inv_std = (var.array() + static_cast<Scalar>(epsilon_)).rsqrt().matrix();
    cache->batch_mean = mean;
    cache->batch_var = var;
    cache->inv_std = inv_std;
    cache->count = count;
    cache->normalized = Tensor4<Scalar>(x.batch(), channels, x.height(), x.width());
  } else {
    mean = running_mean_.value.row(0).transpose();
    inv_std = (running_var_.value.row(0).transpose().array() + static_cast<Scalar>(epsilon_))
                  .rsqrt()
                  .matrix();
  }
  const Vector<Scalar> gamma = gamma_.value.row(0).transpose();
  const Vector<Scalar> beta = beta_.value.row(0).transpose();
  for (Index n = 0; n < x.batch(); ++n) {
    auto out = y.sample(n);
    out = inv_std.asDiagonal() * (x.sample(n).colwise() - mean);
    if (cache) cache->normalized.sample(n) = out;
    out = gamma.asDiagonal() * out;
    out.colwise() += beta;
  }
  return y;
}

template <typename Scalar>
Tensor4<Scalar> BatchNorm2d<Scalar>::backward(const Cache& cache, const Tensor4<Scalar>& dy) {
  const Index channels = dy.channels();
  Vector<Scalar> d_gamma = Vector<Scalar>::Zero(channels);
  Vector<Scalar> d_beta = Vector<Scalar>::Zero(channels);
  for (Index n = 0; n < dy.batch(); ++n) {
    d_beta += dy.sample(n).rowwise().sum();
    d_gamma += dy.sample(n).cwiseProduct(cache.normalized.sample(n)).rowwise().sum();
  }
  gamma_.grad.row(0) += d_gamma.transpose();
  beta_.grad.row(0) += d_beta.transpose();

  const Scalar count = static_cast<Scalar>(cache.count);
  const Vector<Scalar> scale =
      (gamma_.value.row(0).transpose().array() * cache.inv_std.array() / count).matrix();
  Tensor4<Scalar> dx(dy.batch(), channels, dy.height(), dy.width());
  for (Index n = 0; n < dy.batch(); ++n) {
    auto out = dx.sample(n);
    out = dy.sample(n) * count;
    out.colwise() -= d_beta;
    out -= d_gamma.asDiagonal() * cache.normalized.sample(n);
    out = scale.asDiagonal() * out;
  }
  return dx;
}

template <typename Scalar>
void BatchNorm2d<Scalar>::update_running(const Cache& cache, std::optional<double> momentum) {
  const Scalar m = static_cast<Scalar>(momentum.value_or(momentum_));
  const Scalar unbias =
      cache.count > 1 ? static_cast<Scalar>(cache.count) / static_cast<Scalar>(cache.count - 1)
                      : Scalar(1);
  running_mean_.value.row(0) =
      (Scalar(1) - m) * running_mean_.value.row(0) + m * cache.batch_mean.transpose();
  running_var_.value.row(0) =
      (Scalar(1) - m) * running_var_.value.row(0) + m * unbias * cache.batch_var.transpose();
}

template <typename Scalar>
void BatchNorm2d<Scalar>::collect(ParameterList<Scalar>& out) {
  out.insert(out.end(), {&gamma_, &beta_, &running_mean_, &running_var_});
}

template <typename Scalar>
void BatchNorm2d<Scalar>::collect(ConstParameterList<Scalar>& out) const {
  out.insert(out.end(), {&gamma_, &beta_, &running_mean_, &running_var_});
}

// ------------------------------------------------------------------ ReLU

template <typename Scalar>
Tensor4<Scalar> relu(const Tensor4<Scalar>& x) {
  Tensor4<Scalar> y = x;
  y.data() = y.data().cwiseMax(Scalar(0));
  return y;
}

template <typename Scalar>
Tensor4<Scalar> relu_backward(const Tensor4<Scalar>& y, const Tensor4<Scalar>& dy) {
  Tensor4<Scalar> dx = dy;
  dx.data() = (y.data().array() > Scalar(0)).select(dy.data().array(), Scalar(0)).matrix();
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename Scalar>
Linear<Scalar>::Linear(const std::string& name, Index in_features, Index out_features)
    : weight_(name + ".weight", out_features, in_features),
      bias_(name + ".bias", 1, out_features) {}

template <typename Scalar>
void Linear<Scalar>::initialize(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features()));
  fill_uniform(weight_.value, bound, rng);
  fill_uniform(bias_.value, bound, rng);
}

template <typename Scalar>
void Linear<Scalar>::set_identity() {
  weight_.value.setIdentity();
  bias_.value.setZero();
}

template <typename Scalar>
RowMatrix<Scalar> Linear<Scalar>::forward(const RowMatrix<Scalar>& x, Cache* cache) const {
  if (x.cols() != in_features()) {
    throw ShapeError(weight_.name + ": expected " + std::to_string(in_features()) +
                     " features, got " + std::to_string(x.cols()));
  }
  RowMatrix<Scalar> y = x * weight_.value.transpose();
  y.rowwise() += bias_.value.row(0);
  if (cache) cache->input = x;
  return y;
}

template <typename Scalar>
RowMatrix<Scalar> Linear<Scalar>::backward(const Cache& cache, const RowMatrix<Scalar>& dy) {
  weight_.grad.noalias() += dy.transpose() * cache.input;
  bias_.grad.row(0) += dy.colwise().sum();
  return dy * weight_.value;
}

template <typename Scalar>
void Linear<Scalar>::collect(ParameterList<Scalar>& out) {
  out.insert(out.end(), {&weight_, &bias_});
}

template <typename Scalar>
void Linear<Scalar>::collect(ConstParameterList<Scalar>& out) const {
  out.insert(out.end(), {&weight_, &bias_});
}

// --------------------------------------------------------- SqueezeExcite

template <typename Scalar>
SqueezeExcite<Scalar>::SqueezeExcite(const std::string& name, Index channels, Index reduction)
    : fc1_(name + ".fc1", channels, std::max<Index>(1, channels / reduction)),
      fc2_(name + ".fc2", std::max<Index>(1, channels / reduction), channels) {}

template <typename Scalar>
void SqueezeExcite<Scalar>::initialize(std::mt19937_64& rng) {
  fc1_.initialize(rng);
  fc2_.initialize(rng);
}

template <typename Scalar>
RowMatrix<Scalar> SqueezeExcite<Scalar>::gates(const RowMatrix<Scalar>& pooled,
                                               Cache* cache) const {
  RowMatrix<Scalar> hidden =
      fc1_.forward(pooled, cache ? &cache->fc1 : nullptr).cwiseMax(Scalar(0));
  RowMatrix<Scalar> z = fc2_.forward(hidden, cache ? &cache->fc2 : nullptr);
  RowMatrix<Scalar> g = z.unaryExpr([](Scalar v) { return sigmoid(v); });
  if (cache) {
    cache->hidden = hidden;
    cache->gates = g;
  }
  return g;
}

template <typename Scalar>
RowMatrix<Scalar> SqueezeExcite<Scalar>::gates_backward(const Cache& cache,
                                                        const RowMatrix<Scalar>& d_gates) {
  const RowMatrix<Scalar> dz =
      d_gates.cwiseProduct(cache.gates.cwiseProduct((Scalar(1) - cache.gates.array()).matrix()));
  RowMatrix<Scalar> d_hidden = fc2_.backward(cache.fc2, dz);
  d_hidden = (cache.hidden.array() > Scalar(0)).select(d_hidden.array(), Scalar(0)).matrix();
  return fc1_.backward(cache.fc1, d_hidden);
}

template <typename Scalar>
void SqueezeExcite<Scalar>::collect(ParameterList<Scalar>& out) {
  fc1_.collect(out);
  fc2_.collect(out);
}

template <typename Scalar>
void SqueezeExcite<Scalar>::collect(ConstParameterList<Scalar>& out) const {
  fc1_.collect(out);
  fc2_.collect(out);
}

// ----------------------------------------------- EfficientChannelAttention

Index eca_kernel_size(Index channels) {
  const double t = std::abs(std::log2(static_cast<double>(channels)) / 2.0 + 0.5);
  const auto k = static_cast<Index>(t);
  return k % 2 == 1 ? k : k + 1;
}

template <typename Scalar>
EfficientChannelAttention<Scalar>::EfficientChannelAttention(const std::string& name,
                                                             Index kernel)
    : weight_(name + ".weight", 1, kernel) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument(name + ": ECA kernel size must be odd, got " +
                                std::to_string(kernel));
  }
}

template <typename Scalar>
void EfficientChannelAttention<Scalar>::initialize(std::mt19937_64& rng) {
  fill_uniform(weight_.value, 1.0 / std::sqrt(static_cast<double>(kernel())), rng);
}

template <typename Scalar>
RowMatrix<Scalar> EfficientChannelAttention<Scalar>::gates(const RowMatrix<Scalar>& pooled,
                                                           Cache* cache) const {
  const Index k = kernel();
  const Index half = (k - 1) / 2;
  const Index channels = pooled.cols();
  RowMatrix<Scalar> g(pooled.rows(), channels);
  for (Index n = 0; n < pooled.rows(); ++n) {
    for (Index c = 0; c < channels; ++c) {
      Scalar z = 0;
      for (Index j = 0; j < k; ++j) {
        const Index src = c + j - half;
        if (src >= 0 && src < channels) z += weight_.value(0, j) * pooled(n, src);
      }
      g(n, c) = sigmoid(z);
    }
  }
  if (cache) {
    cache->pooled = pooled;
    cache->gates = g;
  }
  return g;
}

template <typename Scalar>
RowMatrix<Scalar> EfficientChannelAttention<Scalar>::gates_backward(
    const Cache& cache, const RowMatrix<Scalar>& d_gates) {
  const Index k = kernel();
  const Index half = (k - 1) / 2;
  const Index channels = cache.pooled.cols();
  const RowMatrix<Scalar> dz =
      d_gates.cwiseProduct(cache.gates.cwiseProduct((Scalar(1) - cache.gates.array()).matrix()));
  RowMatrix<Scalar> d_pooled = RowMatrix<Scalar>::Zero(cache.pooled.rows(), channels);
  for (Index n = 0; n < dz.rows(); ++n) {
    for (Index c = 0; c < channels; ++c) {
      for (Index j = 0; j < k; ++j) {
        const Index src = c + j - half;
        if (src < 0 || src >= channels) continue;
        weight_.grad(0, j) += dz(n, c) * cache.pooled(n, src);
        d_pooled(n, src) += dz(n, c) * weight_.value(0, j);
      }
    }
  }
  return d_pooled;
}

// ------------------------------------------------------ ChannelAttention

template <typename Scalar>
ChannelAttention<Scalar>::ChannelAttention(const std::string& name, AttentionKind kind,
                                           Index channels, Index se_reduction,
                                           Index eca_kernel)
    : kind_(kind) {
  if (kind == AttentionKind::kSE) {
    gate_ = SqueezeExcite<Scalar>(name + ".se", channels, se_reduction);
  } else {
    gate_ = EfficientChannelAttention<Scalar>(
        name + ".eca", eca_kernel > 0 ? eca_kernel : eca_kernel_size(channels));
  }
}

template <typename Scalar>
void ChannelAttention<Scalar>::initialize(std::mt19937_64& rng) {
  std::visit([&](auto& g) { g.initialize(rng); }, gate_);
}

template <typename Scalar>
Tensor4<Scalar> ChannelAttention<Scalar>::forward(const Tensor4<Scalar>& x, Cache* cache,
                                                  RowMatrix<Scalar>* gates_out) const {
  const RowMatrix<Scalar> pooled = global_average_pool(x);
  RowMatrix<Scalar> g;
  if (const auto* se = std::get_if<SqueezeExcite<Scalar>>(&gate_)) {
    typename SqueezeExcite<Scalar>::Cache c;
    g = se->gates(pooled, cache ? &c : nullptr);
    if (cache) cache->gate_cache = std::move(c);
  } else {
    const auto& eca = std::get<EfficientChannelAttention<Scalar>>(gate_);
    typename EfficientChannelAttention<Scalar>::Cache c;
    g = eca.gates(pooled, cache ? &c : nullptr);
    if (cache) cache->gate_cache = std::move(c);
  }
  Tensor4<Scalar> y(x.batch(), x.channels(), x.height(), x.width());
  for (Index n = 0; n < x.batch(); ++n) {
    y.sample(n) = g.row(n).transpose().asDiagonal() * x.sample(n);
  }
  if (cache) {
    cache->input = x;
    cache->gates = g;
  }
  if (gates_out) *gates_out = std::move(g);
  return y;
}

template <typename Scalar>
Tensor4<Scalar> ChannelAttention<Scalar>::backward(const Cache& cache,
                                                   const Tensor4<Scalar>& dy) {
  const Tensor4<Scalar>& x = cache.input;
  RowMatrix<Scalar> d_gates(x.batch(), x.channels());
  Tensor4<Scalar> dx(x.batch(), x.channels(), x.height(), x.width());
  for (Index n = 0; n < x.batch(); ++n) {
    d_gates.row(n) = dy.sample(n).cwiseProduct(x.sample(n)).rowwise().sum().transpose();
    dx.sample(n) = cache.gates.row(n).transpose().asDiagonal() * dy.sample(n);
  }
  RowMatrix<Scalar> d_pooled;
  if (auto* se = std::get_if<SqueezeExcite<Scalar>>(&gate_)) {
    d_pooled = se->gates_backward(
        std::get<typename SqueezeExcite<Scalar>::Cache>(cache.gate_cache), d_gates);
  } else {
    auto& eca = std::get<EfficientChannelAttention<Scalar>>(gate_);
    d_pooled = eca.gates_backward(
        std::get<typename EfficientChannelAttention<Scalar>::Cache>(cache.gate_cache), d_gates);
  }
  accumulate_pool_gradient(d_pooled, dx);
  return dx;
}

template <typename Scalar>
void ChannelAttention<Scalar>::collect(ParameterList<Scalar>& out) {
  std::visit([&](auto& g) { g.collect(out); }, gate_);
}

template <typename Scalar>
void ChannelAttention<Scalar>::collect(ConstParameterList<Scalar>& out) const {
  std::visit([&](const auto& g) { g.collect(out); }, gate_);
}

// ----------------------------------------------------------- AngleLinear

template <typename Scalar>
AngleLinear<Scalar>::AngleLinear(const std::string& name, Index in_features, Index classes)
    : weight_(name + ".weight", classes, in_features, ParameterKind::kUnitRows) {}

template <typename Scalar>
void AngleLinear<Scalar>::initialize(std::mt19937_64& rng) {
  fill_uniform(weight_.value, 1.0, rng);
  normalize_rows();
}

template <typename Scalar>
void AngleLinear<Scalar>::normalize_rows() {
  for (Index j = 0; j < weight_.value.rows(); ++j) {
    const Scalar n = weight_.value.row(j).norm();
    if (n > Scalar(0)) weight_.value.row(j) /= n;
  }
}

template <typename Scalar>
AngleOutput<Scalar> AngleLinear<Scalar>::forward(const RowMatrix<Scalar>& x,
                                                 Cache* cache) const {
  if (x.cols() != in_features()) {
    throw ShapeError(weight_.name + ": expected " + std::to_string(in_features()) +
                     " features, got " + std::to_string(x.cols()));
  }
  AngleOutput<Scalar> out;
  out.norm = x.rowwise().norm();
  const Vector<Scalar> wnorm = weight_.value.rowwise().norm();
  RowMatrix<Scalar> raw = x * weight_.value.transpose();
  out.cos.resize(x.rows(), classes());
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> clipped(x.rows(),
                                                                             classes());
  for (Index n = 0; n < x.rows(); ++n) {
    for (Index j = 0; j < classes(); ++j) {
      const Scalar denom = out.norm[n] * wnorm[j];
      Scalar c = denom > Scalar(0) ? raw(n, j) / denom : Scalar(0);
      clipped(n, j) = denom <= Scalar(0) || c > Scalar(1) || c < Scalar(-1);
      out.cos(n, j) = std::clamp(c, Scalar(-1), Scalar(1));
    }
  }
  if (cache) {
    cache->input = x;
    cache->input_norm = out.norm;
    cache->weight_norm = wnorm;
    cache->cos = out.cos;
    cache->clipped = std::move(clipped);
  }
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> AngleLinear<Scalar>::backward(const Cache& cache, const RowMatrix<Scalar>& d_cos,
                                                const Vector<Scalar>& d_norm) {
  const RowMatrix<Scalar>& x = cache.input;
  const RowMatrix<Scalar>& w = weight_.value;
  RowMatrix<Scalar> dx = RowMatrix<Scalar>::Zero(x.rows(), x.cols());
  for (Index n = 0; n < x.rows(); ++n) {
    const Scalar xn = cache.input_norm[n];
    if (xn <= Scalar(0)) continue;
    dx.row(n) += d_norm[n] * x.row(n) / xn;
    for (Index j = 0; j < w.rows(); ++j) {
      if (cache.clipped(n, j)) continue;
      const Scalar g = d_cos(n, j);
      const Scalar wn = cache.weight_norm[j];
      const Scalar c = cache.cos(n, j);
      // d cos / d x = w / (|x||w|) - cos x / |x|^2, and symmetrically for w.
      dx.row(n) += g * (w.row(j) / (xn * wn) - c * x.row(n) / (xn * xn));
      weight_.grad.row(j) += g * (x.row(n) / (xn * wn) - c * w.row(j) / (wn * wn));
    }
  }
  return dx;
}

#define FSD_INSTANTIATE_LAYERS(T)                                                  \
  template class Conv2d<T>;                                                        \
  template class BatchNorm2d<T>;                                                   \
  template class Linear<T>;                                                        \
  template class SqueezeExcite<T>;                                                 \
  template class EfficientChannelAttention<T>;                                     \
  template class ChannelAttention<T>;                                              \
  template class AngleLinear<T>;                                                   \
  template Tensor4<T> relu<T>(const Tensor4<T>&);                                  \
  template Tensor4<T> relu_backward<T>(const Tensor4<T>&, const Tensor4<T>&);

FSD_INSTANTIATE_LAYERS(float)
FSD_INSTANTIATE_LAYERS(double)

#undef FSD_INSTANTIATE_LAYERS

}  // namespace fsd
