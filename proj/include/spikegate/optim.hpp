#pragma once

#include <cmath>
#include <map>
#include <string>

#include "spikegate/params.hpp"

namespace spikegate {

enum class OptimizerKind { sgd, adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

/// SGD with heavy-ball momentum, or Adam with beta1 = momentum. Only the
/// trainable entries of the parameter set are updated. Weight decay is the
/// coupled L2 form (wd * w added to the gradient).
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double momentum, double weight_decay = 0.0)
      : kind_(kind), lr_(lr), momentum_(momentum), wd_(weight_decay) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  }

  double lr() const { return lr_; }
  void set_lr(double lr) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    lr_ = lr;
  }

  void step(ParameterSet& params) {
    ++t_;
    for (const auto& name : params.trainable_names()) {
      Tensor& w = params.value(name);
      Tensor& g = params.grad(name);
      if (wd_ > 0.0) {
        for (std::size_t i = 0; i < w.size(); ++i) g[i] += wd_ * w[i];
      }
      auto& m = first_[name];
      if (m.shape() != w.shape()) m = Tensor(w.shape());
      if (kind_ == OptimizerKind::sgd) {
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = momentum_ * m[i] + g[i];
          w[i] -= lr_ * m[i];
        }
        continue;
      }
      auto& v = second_[name];
      if (v.shape() != w.shape()) v = Tensor(w.shape());
      const double b1 = momentum_, b2 = 0.999, eps = 1e-8;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  double momentum_;
  double wd_;
  long t_ = 0;
  std::map<std::string, Tensor> first_;
  std::map<std::string, Tensor> second_;
};

}  // namespace spikegate
