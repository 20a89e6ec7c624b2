#pragma once

#include "fsd/errors.hpp"
#include "fsd/layers.hpp"
#include "fsd/tensor.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>

namespace fsd {

struct LossBreakdown {
  double hard = 0.0;
  double soft = 0.0;
  double feature = 0.0;
  double total = 0.0;
};

// total = alpha * hard + (1 - alpha) * soft + beta * feature
inline LossBreakdown total_loss(double hard, double soft, double feature, double alpha,
                                double beta) {
  return {hard, soft, feature, alpha * hard + (1.0 - alpha) * soft + beta * feature};
}

// cos(m theta) as the Chebyshev polynomial T_m(c), and its derivative in c.
inline double chebyshev(int m, double c) {
  switch (m) {
    case 1: return c;
    case 2: return 2 * c * c - 1;
    case 3: return (4 * c * c - 3) * c;
    case 4: return (8 * c * c - 8) * c * c + 1;
    default: throw std::invalid_argument("angular margin must be in 1..4");
  }
}

inline double chebyshev_derivative(int m, double c) {
  switch (m) {
    case 1: return 1;
    case 2: return 4 * c;
    case 3: return 12 * c * c - 3;
    case 4: return (32 * c * c - 16) * c;
    default: throw std::invalid_argument("angular margin must be in 1..4");
  }
}

// Monotone margin target psi(theta) = (-1)^k cos(m theta) - 2k with
// k = floor(m theta / pi), as a function of c = cos(theta).
struct MarginTarget {
  double psi;
  double dpsi_dcos;
};

inline MarginTarget angular_margin(int m, double c) {
  c = std::clamp(c, -1.0, 1.0);
  const double theta = std::acos(c);
  int k = static_cast<int>(std::floor(m * theta / std::numbers::pi));
  k = std::clamp(k, 0, m - 1);
  const double sign = (k % 2 == 0) ? 1.0 : -1.0;
  return {sign * chebyshev(m, c) - 2.0 * k, sign * chebyshev_derivative(m, c)};
}

// Blend weight of the margin target: lambda_max / (1 + 0.1 iter) floored at
// lambda_min; 0 when annealing is off (pure margin target).
inline double anneal_lambda(bool anneal, double lambda_min, double lambda_max, long iteration) {
  if (!anneal) return 0.0;
  return std::max(lambda_min, lambda_max / (1.0 + 0.1 * static_cast<double>(iteration)));
}

template <typename Scalar>
struct AngleLossResult {
  double loss = 0.0;
  RowMatrix<Scalar> d_cos;
  Vector<Scalar> d_norm;
};

// A-softmax: cross-entropy over norm * cos logits whose target entry is
// replaced by norm * (cos + (psi - cos) / (1 + lambda)). Batch-averaged.
template <typename Scalar>
AngleLossResult<Scalar> a_softmax_loss(const AngleOutput<Scalar>& out, std::span<const int> labels,
                                       int margin, double lambda) {
  const Index batch = out.cos.rows();
  const Index classes = out.cos.cols();
  if (batch == 0) throw std::invalid_argument("a_softmax_loss: empty batch");
  if (static_cast<Index>(labels.size()) != batch) {
    throw ShapeError("a_softmax_loss: label count does not match batch");
  }
  const double blend = 1.0 / (1.0 + lambda);
  AngleLossResult<Scalar> result;
  result.d_cos = RowMatrix<Scalar>::Zero(batch, classes);
  result.d_norm = Vector<Scalar>::Zero(batch);
  Eigen::VectorXd unit(classes);  // per-class logit divided by the norm
  Eigen::VectorXd logit(classes);
  for (Index n = 0; n < batch; ++n) {
    const int y = labels[n];
    if (y < 0 || y >= classes) throw std::invalid_argument("a_softmax_loss: bad label");
    const double norm = static_cast<double>(out.norm[n]);
    for (Index j = 0; j < classes; ++j) unit[j] = static_cast<double>(out.cos(n, j));
    const double c = unit[y];
    const MarginTarget target = angular_margin(margin, c);
    unit[y] = c + (target.psi - c) * blend;
    logit = norm * unit;
    const double top = logit.maxCoeff();
    const double lse = top + std::log((logit.array() - top).exp().sum());
    result.loss += lse - logit[y];
    Eigen::VectorXd d_logit = (logit.array() - lse).exp().matrix() / static_cast<double>(batch);
    d_logit[y] -= 1.0 / static_cast<double>(batch);
    for (Index j = 0; j < classes; ++j) {
      const double dcos_dj = (j == y) ? (1.0 - blend) + target.dpsi_dcos * blend : 1.0;
      result.d_cos(n, j) = static_cast<Scalar>(d_logit[j] * norm * dcos_dj);
    }
    result.d_norm[n] = static_cast<Scalar>(d_logit.dot(unit));
  }
  result.loss /= static_cast<double>(batch);
  return result;
}

// Row-wise log-softmax of logits / temperature in double precision.
template <typename Scalar>
Eigen::MatrixXd log_softmax(const RowMatrix<Scalar>& logits, double temperature) {
  Eigen::MatrixXd z = logits.template cast<double>() / temperature;
  for (Index n = 0; n < z.rows(); ++n) {
    const double top = z.row(n).maxCoeff();
    const double lse = top + std::log((z.row(n).array() - top).exp().sum());
    z.row(n).array() -= lse;
  }
  return z;
}

// KL(p || q) of two discrete distributions.
inline double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  double kl = 0.0;
  for (Index j = 0; j < p.size(); ++j) {
    if (p[j] > 0) kl += p[j] * std::log(p[j] / q[j]);
  }
  return kl;
}

template <typename Scalar>
struct SoftLossResult {
  double loss = 0.0;
  std::array<double, 3> per_branch{};
  std::array<RowMatrix<Scalar>, 3> d_logits;
};

// Sum over shallow heads of KL(softmax(p4/T) || softmax(p_i/T)), batch mean.
// The teacher distribution is a constant: no gradient reaches p4.
template <typename Scalar>
SoftLossResult<Scalar> soft_loss(const std::array<RowMatrix<Scalar>, 3>& shallow_logits,
                                 const RowMatrix<Scalar>& teacher_logits, double temperature) {
  if (!(temperature > 0)) throw std::invalid_argument("soft_loss: temperature must be > 0");
  if (!teacher_logits.allFinite()) throw NumericError("soft_loss: non-finite teacher logits");
  const Index batch = teacher_logits.rows();
  if (batch == 0) throw std::invalid_argument("soft_loss: empty batch");
  const Eigen::MatrixXd log_p = log_softmax(teacher_logits, temperature);
  const Eigen::MatrixXd p = log_p.array().exp();
  SoftLossResult<Scalar> result;
  for (int i = 0; i < 3; ++i) {
    const RowMatrix<Scalar>& student = shallow_logits[i];
    if (student.rows() != batch || student.cols() != teacher_logits.cols()) {
      throw ShapeError("soft_loss: student logits shape mismatch");
    }
    if (!student.allFinite()) throw NumericError("soft_loss: non-finite student logits");
    const Eigen::MatrixXd log_q = log_softmax(student, temperature);
    const double kl = (p.array() * (log_p - log_q).array()).sum() / static_cast<double>(batch);
    result.per_branch[i] = kl;
    result.loss += kl;
    result.d_logits[i] = ((log_q.array().exp() - p.array()) /
                          (temperature * static_cast<double>(batch)))
                             .matrix()
                             .template cast<Scalar>();
  }
  return result;
}

template <typename Scalar>
struct FeatureLossResult {
  double loss = 0.0;
  std::array<double, 3> per_branch{};
  std::array<RowMatrix<Scalar>, 3> d_adapted;
};

// Sum over shallow branches of mean((v_i - e)^2) over batch and dimension;
// the deepest embedding e is a constant.
template <typename Scalar>
FeatureLossResult<Scalar> feature_loss(const std::array<RowMatrix<Scalar>, 3>& adapted,
                                       const RowMatrix<Scalar>& deepest) {
  FeatureLossResult<Scalar> result;
  const double count = static_cast<double>(deepest.size());
  if (count == 0) throw std::invalid_argument("feature_loss: empty batch");
  const Eigen::MatrixXd target = deepest.template cast<double>();
  for (int i = 0; i < 3; ++i) {
    if (adapted[i].rows() != deepest.rows() || adapted[i].cols() != deepest.cols()) {
      throw ShapeError("feature_loss: dimension mismatch (" + std::to_string(adapted[i].cols()) +
                       " vs " + std::to_string(deepest.cols()) + ")");
    }
    const Eigen::MatrixXd diff = adapted[i].template cast<double>() - target;
    result.per_branch[i] = diff.squaredNorm() / count;
    result.loss += result.per_branch[i];
    result.d_adapted[i] = (2.0 / count * diff).template cast<Scalar>();
  }
  return result;
}

}  // namespace fsd
