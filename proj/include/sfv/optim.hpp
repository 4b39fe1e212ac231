#pragma once

#include <cstdint>
#include <vector>

#include "sfv/nets.hpp"

namespace sfv {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Updates parameter storage in place.
class Adam {
 public:
  Adam(NamedTensors params, AdamConfig cfg);

  void step(const std::vector<Tensor>& grads);

  const NamedTensors& params() const { return params_; }
  const NamedTensors& first_moments() const { return m_; }
  const NamedTensors& second_moments() const { return v_; }
  NamedTensors& first_moments() { return m_; }
  NamedTensors& second_moments() { return v_; }
  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  AdamConfig& config() { return cfg_; }

 private:
  NamedTensors params_;
  NamedTensors m_, v_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

// shadow <- rate * shadow + (1 - rate) * params.
void ema_update(const NamedTensors& shadow, const NamedTensors& params, double rate);

// Tensors only, in order.
std::vector<Tensor> tensors_of(const NamedTensors& params);

}  // namespace sfv
