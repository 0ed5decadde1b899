#pragma once

#include <cstdint>
#include <vector>

#include "vit3d/tensor.hpp"

namespace vit3d {

enum class WeightDecayMode { Decoupled, L2 };

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  WeightDecayMode decay_mode = WeightDecayMode::Decoupled;

  void validate() const;
};

struct AdamState {
  std::int64_t step = 0;
  NamedTensors<float> m;
  NamedTensors<float> v;
};

/// One bias-corrected Adam update. Weight decay applies only to tensors that
/// are not LayerNorm parameters or biases: decoupled mode shrinks them by
/// lr * wd * theta before the Adam step, L2 mode adds wd * theta to the gradient.
/// `lr_multipliers`, when given, scales lr per tensor (same order as params).
void adam_step(ParamStore<float>& params, const NamedTensors<float>& grads, AdamState& state,
               const OptimizerConfig& opt, double lr, const std::vector<double>* lr_multipliers = nullptr);

}  // namespace vit3d
