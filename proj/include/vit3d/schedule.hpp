#pragma once

#include <cstdint>
#include <string>

#include "vit3d/vit.hpp"

namespace vit3d {

struct ScheduleConfig {
  int warmup_epochs = 1;
  int total_epochs = 10;
  double eta_min = 0.0;
  int steps_per_epoch = 1;

  void validate() const;
  std::int64_t warmup_steps() const { return static_cast<std::int64_t>(warmup_epochs) * steps_per_epoch; }
  std::int64_t total_steps() const { return static_cast<std::int64_t>(total_epochs) * steps_per_epoch; }
};

/// Per-step learning rate. With W warmup steps and T total steps:
/// step < W: base_lr * (step + 1) / W; otherwise
/// eta_min + (base_lr - eta_min) * (1 + cos(pi * (step - W) / (T - W - 1))) / 2,
/// and base_lr when T - W == 1.
double lr_at(std::int64_t step, const ScheduleConfig& sched, double base_lr);

struct FinetuneConfig {
  std::string source_checkpoint;
  double layerwise_decay = 0.75;  // 1.0 disables
  bool reinit_head = true;
  double lr_scale = 1.0;

  void validate() const;
};

/// base_lr * layerwise_decay^(L + 1 - depth) with depth from param_depth():
/// the head keeps base_lr, each step toward the input multiplies by the decay.
double layerwise_lr(const std::string& param_name, const ModelConfig& cfg, double layerwise_decay, double base_lr);

}  // namespace vit3d
