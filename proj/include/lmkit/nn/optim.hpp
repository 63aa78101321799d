// Copyright 2026 The lmkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lmkit/core/error.hpp"
#include "lmkit/nn/graph.hpp"

namespace lmkit::nn {

// Linear ramp from 0 to `base` over `warmup` steps, then linear decay to 0
// at `total`.
inline double warmup_linear_decay(double base, std::int64_t warmup, std::int64_t total,
                                  std::int64_t step) {
  if (step < 0 || step > total) {
    throw ConfigError("learning-rate step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total) + "]");
  }
  if (warmup > 0 && step <= warmup) {
    return base * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (total == warmup) return base;
  return base * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

// Scales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <class T>
double clip_grad_norm(const std::vector<Parameter<T>*>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) sq += static_cast<double>(p->grad.squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / (norm + 1e-12));
    for (auto* p : params) p->grad *= s;
  }
  return norm;
}

template <class T>
void zero_grads(const std::vector<Parameter<T>*>& params) {
  for (auto* p : params) p->zero_grad();
}

// Adam with decoupled weight decay, applied only to parameters whose decay
// flag is set.
template <class T>
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-6;
    double weight_decay = 0.01;
  };

  AdamW(std::vector<Parameter<T>*> params, Options opt) : params_(std::move(params)), opt_(opt) {
    for (auto* p : params_) {
      m_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T step_size = static_cast<T>(lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(opt_.eps);
    const T decay = static_cast<T>(lr * opt_.weight_decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      m_[i] = b1 * m_[i] + (1 - b1) * p.grad;
      v_[i] = b2 * v_[i] + (1 - b2) * p.grad.cwiseProduct(p.grad);
      if (p.decay && opt_.weight_decay > 0.0) p.value -= decay * p.value;
      p.value.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + eps);
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  const std::vector<Parameter<T>*>& params() const { return params_; }
  std::vector<Mat<T>>& first_moments() { return m_; }
  std::vector<Mat<T>>& second_moments() { return v_; }

 private:
  std::vector<Parameter<T>*> params_;
  Options opt_;
  std::vector<Mat<T>> m_, v_;
  std::int64_t t_ = 0;
};

// Plain SGD.
template <class T>
void sgd_step(const std::vector<Parameter<T>*>& params, double lr) {
  for (auto* p : params) p->value -= static_cast<T>(lr) * p->grad;
}

}  // namespace lmkit::nn
