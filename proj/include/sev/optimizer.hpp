#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sev/config.hpp"
#include "sev/model.hpp"

namespace sev {

// Adam with decoupled weight decay: the decay term lr * lambda * w is
// applied outside the adaptive update, so a step with zero gradients
// shrinks weights by exactly w * (1 - lr * lambda).
template <typename S>
class AdamW {
 public:
  AdamW(ParamRegistry<S>& params, const OptimizerConfig& cfg)
      : cfg_(cfg), lr_(cfg.lr) {
    for (auto& e : params.entries()) {
      if (!e.trainable) continue;
      slots_.push_back({e.tensor, std::vector<S>(e.tensor.size(), S(0)),
                        std::vector<S>(e.tensor.size(), S(0))});
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::size_t step_count() const { return t_; }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (auto& s : slots_) {
      auto w = s.param.data_mut();
      auto g = s.param.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double grad = double(g[i]);
        const double m = cfg_.beta1 * double(s.m[i]) + (1.0 - cfg_.beta1) * grad;
        const double v = cfg_.beta2 * double(s.v[i]) + (1.0 - cfg_.beta2) * grad * grad;
        s.m[i] = S(m);
        s.v[i] = S(v);
        const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        w[i] = S(double(w[i]) - lr_ * update - lr_ * cfg_.weight_decay * double(w[i]));
      }
    }
  }

 private:
  struct Slot {
    Tensor<S> param;
    std::vector<S> m, v;
  };
  OptimizerConfig cfg_;
  double lr_;
  std::size_t t_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace sev
