#include "vit3d/schedule.hpp"

#include <cmath>
#include <numbers>

#include "vit3d/error.hpp"

namespace vit3d {

void ScheduleConfig::validate() const {
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
  if (warmup_epochs >= total_epochs) {
    throw ConfigError("warmup_epochs (" + std::to_string(warmup_epochs) + ") must be less than total epochs (" +
                      std::to_string(total_epochs) + ")");
  }
  if (!(eta_min >= 0.0)) throw ConfigError("eta_min must be >= 0");
  if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
}

double lr_at(std::int64_t step, const ScheduleConfig& sched, double base_lr) {
  sched.validate();
  const std::int64_t W = sched.warmup_steps();
  const std::int64_t T = sched.total_steps();
  if (step < 0 || step >= T) {
    throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(T) + ")");
  }
  if (step < W) return base_lr * (static_cast<double>(step + 1) / static_cast<double>(W));
  if (T - W == 1) return base_lr;
  const double progress = static_cast<double>(step - W) / static_cast<double>(T - W - 1);
  return sched.eta_min + 0.5 * (base_lr - sched.eta_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

void FinetuneConfig::validate() const {
  if (!(layerwise_decay > 0.0 && layerwise_decay <= 1.0)) throw ConfigError("layerwise_decay must be in (0, 1]");
  if (!(lr_scale > 0.0 && lr_scale <= 1.0)) throw ConfigError("lr_scale must be in (0, 1]");
}

double layerwise_lr(const std::string& param_name, const ModelConfig& cfg, double layerwise_decay, double base_lr) {
  const int depth = param_depth(param_name, cfg);
  return base_lr * std::pow(layerwise_decay, cfg.n_layers + 1 - depth);
}

}  // namespace vit3d
