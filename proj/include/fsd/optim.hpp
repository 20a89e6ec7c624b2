#pragma once

#include "fsd/errors.hpp"
#include "fsd/layers.hpp"

#include <cmath>
#include <map>
#include <string>

namespace fsd {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  double weight_decay = 1e-4;  // L2 term added to the gradient

  void validate() const {
    if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("beta2 must lie in [0, 1)");
    if (!(epsilon > 0)) throw ConfigError("epsilon must be > 0");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  }

  bool operator==(const AdamConfig&) const = default;
};

// Adam with bias correction. Moments are keyed by parameter name so that the
// state survives a checkpoint round trip.
template <typename Scalar>
class Adam {
 public:
  struct Moments {
    RowMatrix<Scalar> first;
    RowMatrix<Scalar> second;
  };

  Adam() = default;
  Adam(AdamConfig cfg, double learning_rate) : cfg_(cfg), learning_rate_(learning_rate) {
    cfg_.validate();
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  }

  void step(const ParameterList<Scalar>& params) {
    ++steps_;
    const double correction1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double correction2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    const auto b1 = static_cast<Scalar>(cfg_.beta1);
    const auto b2 = static_cast<Scalar>(cfg_.beta2);
    const auto step_size = static_cast<Scalar>(learning_rate_ / correction1);
    const auto root_correction2 = static_cast<Scalar>(std::sqrt(correction2));
    const auto eps = static_cast<Scalar>(cfg_.epsilon);
    const auto decay = static_cast<Scalar>(cfg_.weight_decay);
    for (Parameter<Scalar>* p : params) {
      if (!p->trainable()) continue;
      auto [it, fresh] = moments_.try_emplace(p->name);
      Moments& m = it->second;
      if (fresh) {
        m.first = RowMatrix<Scalar>::Zero(p->value.rows(), p->value.cols());
        m.second = RowMatrix<Scalar>::Zero(p->value.rows(), p->value.cols());
      }
      const RowMatrix<Scalar> g = p->grad + decay * p->value;
      m.first = b1 * m.first + (Scalar(1) - b1) * g;
      m.second = b2 * m.second + (Scalar(1) - b2) * g.cwiseProduct(g);
      p->value.array() -= step_size * m.first.array() /
                          (m.second.array().sqrt() / root_correction2 + eps);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  double learning_rate() const { return learning_rate_; }
  long steps() const { return steps_; }
  void set_steps(long steps) { steps_ = steps; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  AdamConfig cfg_;
  double learning_rate_ = 1e-3;
  long steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace fsd
