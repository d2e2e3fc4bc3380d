// Copyright 2026 The stau Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "stau/rng.hpp"
#include "stau/tensor.hpp"

namespace stau {

// A named trainable tensor with Adam moment buffers. Moments accumulate in
// 64-bit; the stored weights stay float32.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> m, v;
  long long steps = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor t) : name(std::move(n)), value(std::move(t)) {}

  long long numel() const { return value.numel(); }
};

inline Parameter make_parameter(std::string name, Shape4 shape, std::vector<float> data) {
  return Parameter(std::move(name), Tensor::from_vector(shape, std::move(data), true));
}

inline Parameter zeros_parameter(std::string name, Shape4 shape) {
  return Parameter(std::move(name), Tensor::zeros(shape, true));
}

inline Parameter const_parameter(std::string name, Shape4 shape, float v) {
  return Parameter(std::move(name), Tensor::filled(shape, v, true));
}

// Kaiming-uniform fan-in init: bound = gain*sqrt(3/fan_in) with the leaky
// rectifier gain sqrt(2/(1+slope^2)).
inline Parameter kaiming_parameter(std::string name, Shape4 shape, long long fan_in,
                                   double slope, Xoshiro256pp& rng) {
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<float> data(static_cast<size_t>(shape.numel()));
  for (auto& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
  return make_parameter(std::move(name), shape, std::move(data));
}

// Standard bias-corrected Adam. Parameters whose gradient buffer is empty
// (unreached by the last backward pass) are left untouched.
class AdamOptimizer {
 public:
  AdamOptimizer(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }

  void step(std::span<Parameter* const> params) const {
    for (Parameter* p : params) {
      auto grad = p->value.grad();
      if (grad.empty()) continue;
      const size_t n = grad.size();
      if (p->m.empty()) {
        p->m.assign(n, 0.0);
        p->v.assign(n, 0.0);
      }
      p->steps += 1;
      const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(p->steps));
      const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(p->steps));
      auto w = p->value.raw_values();
      for (size_t i = 0; i < n; ++i) {
        const double g = grad[i];
        p->m[i] = beta1_ * p->m[i] + (1.0 - beta1_) * g;
        p->v[i] = beta2_ * p->v[i] + (1.0 - beta2_) * g * g;
        const double mhat = p->m[i] / bc1;
        const double vhat = p->v[i] / bc2;
        w[i] = static_cast<float>(static_cast<double>(w[i]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
      p->value.clear_grad();
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
};

}  // namespace stau
