#pragma once

#include <span>
#include <vector>

#include "vslnet/layers.hpp"

namespace vslnet {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Steps over which the learning rate decays linearly to zero; 0 disables decay.
  std::size_t total_steps = 0;
};

struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<Tensor> first_moment;   // aligned with ParamStore::entries()
  std::vector<Tensor> second_moment;

  static AdamState create(const ParamStore& params, AdamConfig config);
};

struct AdamStepInfo {
  double learning_rate = 0.0;
  // True once the step counter has run past total_steps and the rate is clamped at 0.
  bool schedule_exhausted = false;
};

// base_lr * max(0, 1 - completed_steps / total_steps).
double scheduled_learning_rate(const AdamConfig& config, std::size_t completed_steps);

double global_grad_norm(std::span<const Tensor> tensors);
double global_grad_norm(const ParamStore& params);

// Rescales all gradients by max_norm / g when their global L2 norm g exceeds
// max_norm. Returns g (before clipping).
double clip_global_norm(std::span<Tensor> tensors, double max_norm);
double clip_global_norm(ParamStore& params, double max_norm);

// Bias-corrected Adam update of every parameter from its current gradient.
AdamStepInfo adam_step(AdamState& state, ParamStore& params);

}  // namespace vslnet
