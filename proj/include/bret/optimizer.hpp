#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bret/tensor.hpp"

namespace bret {

struct OptimizerConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  // Linear warmup to learning_rate over warmup_steps, then linear decay to 0
  // at total_steps. total_steps == 0 keeps the rate constant after warmup.
  int warmup_steps = 0;
  int total_steps = 0;
};

/// AdamW with bias correction and decoupled weight decay.
template <typename T>
class AdamW {
 public:
  explicit AdamW(OptimizerConfig cfg) : cfg_(cfg) {
    if (cfg_.learning_rate <= 0) throw std::invalid_argument("adamw: learning rate must be positive");
    if (cfg_.beta1 < 0 || cfg_.beta1 >= 1 || cfg_.beta2 < 0 || cfg_.beta2 >= 1)
      throw std::invalid_argument("adamw: betas must lie in [0,1)");
  }

  const OptimizerConfig& config() const { return cfg_; }
  long long step_count() const { return step_; }

  double learning_rate_at(long long step) const {
    double lr = cfg_.learning_rate;
    if (cfg_.warmup_steps > 0 && step <= cfg_.warmup_steps)
      return lr * static_cast<double>(step) / cfg_.warmup_steps;
    if (cfg_.total_steps > cfg_.warmup_steps) {
      const double frac = static_cast<double>(cfg_.total_steps - step) /
                          static_cast<double>(cfg_.total_steps - cfg_.warmup_steps);
      return lr * std::max(0.0, frac);
    }
    return lr;
  }

  /// Applies one update from the gradients currently held by the parameters,
  /// then clears them. Rejects NaN gradients by parameter name.
  void step(const std::vector<Parameter<T>*>& params) {
    ++step_;
    const double lr = learning_rate_at(step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (Parameter<T>* p : params) {
      for (T gv : p->grad)
        if (!std::isfinite(static_cast<double>(gv)))
          throw std::runtime_error("adamw: non-finite gradient for parameter '" + p->name + "'");
      Moments& mom = moments(p);
      for (size_t i = 0; i < p->value.size(); ++i) {
        const double gv = static_cast<double>(p->grad[i]);
        mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * gv;
        mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * gv * gv;
        const double mhat = mom.m[i] / bc1;
        const double vhat = mom.v[i] / bc2;
        double x = static_cast<double>(p->value[i]);
        x -= lr * (mhat / (std::sqrt(vhat) + cfg_.epsilon) + cfg_.weight_decay * x);
        p->value[i] = static_cast<T>(x);
      }
      p->zero_grad();
    }
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };

  Moments& moments(Parameter<T>* p) {
    auto it = state_.find(p);
    if (it == state_.end()) {
      Moments mom;
      mom.m.assign(p->value.size(), 0.0);
      mom.v.assign(p->value.size(), 0.0);
      it = state_.emplace(p, std::move(mom)).first;
    }
    if (it->second.m.size() != p->value.size())
      throw std::invalid_argument("adamw: moment shape mismatch for parameter '" + p->name + "'");
    return it->second;
  }

  OptimizerConfig cfg_;
  long long step_ = 0;
  std::unordered_map<Parameter<T>*, Moments> state_;
};

}  // namespace bret
