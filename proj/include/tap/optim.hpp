#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tap/common.hpp"
#include "tap/tensor.hpp"

namespace tap {

// Adam with constant learning rate and no weight decay.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, float lr, float beta1 = 0.9f,
                float beta2 = 0.999f, float eps = 1e-8f)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr <= 0.0f) throw ArgumentError("adam: learning rate must be positive");
    for (auto& p : params_) {
      if (!p.requires_grad()) throw ArgumentError("adam: parameter without gradient");
      m_.emplace_back(p.size(), 0.0f);
      v_.emplace_back(p.size(), 0.0f);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void scale_grads(float c) {
    for (auto& p : params_)
      for (auto& g : p.grad()) g *= c;
  }

  void step() {
    ++t_;
    const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto data = params_[pi].data();
      auto grad = params_[pi].grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < data.size(); ++i) {
        const float g = grad[i];
        m[i] = beta1_ * m[i] + (1.0f - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0f - beta2_) * g * g;
        const float mhat = m[i] / bc1;
        const float vhat = v[i] / bc2;
        data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  std::int64_t step_count() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_, v_;
  float lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

}  // namespace tap
