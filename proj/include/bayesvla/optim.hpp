#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "bayesvla/nn.hpp"

namespace bayesvla::nn {

// AdamW with decoupled weight decay and bias-corrected moments.
template <class T>
class AdamW {
 public:
  struct Moments {
    std::vector<T> m, v;
  };

  explicit AdamW(T lr = T(1e-4), T weight_decay = T(1e-2), T beta1 = T(0.9),
                 T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamList<T>& params) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), step_count_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), step_count_);
    for (auto& p : params) {
      if (p.tensor.frozen())
        throw ContractError("optimizer step on frozen parameter: " + p.name);
      auto& state = moments_[p.name];
      auto& val = p.tensor.data();
      const auto& grad = p.tensor.grad();
      if (state.m.empty()) {
        state.m.assign(val.size(), T(0));
        state.v.assign(val.size(), T(0));
      }
      if (grad.empty()) {
        // no gradient reached this parameter this step; decay still applies
        for (auto& w : val) w -= lr_ * wd_ * w;
        continue;
      }
      for (std::size_t i = 0; i < val.size(); ++i) {
        const T g = grad[i];
        if (!std::isfinite(static_cast<double>(g)))
          throw NumericError("NaN/inf gradient in parameter: " + p.name);
        state.m[i] = beta1_ * state.m[i] + (T(1) - beta1_) * g;
        state.v[i] = beta2_ * state.v[i] + (T(1) - beta2_) * g * g;
        const T mhat = state.m[i] / static_cast<T>(bc1);
        const T vhat = state.v[i] / static_cast<T>(bc2);
        val[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * val[i]);
      }
    }
  }

  long step_count() const { return step_count_; }
  T lr() const { return lr_; }
  void set_lr(T lr) { lr_ = lr; }

 private:
  T lr_, wd_, beta1_, beta2_, eps_;
  long step_count_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

}  // namespace bayesvla::nn
