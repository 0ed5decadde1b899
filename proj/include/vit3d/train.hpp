#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vit3d/dataset.hpp"
#include "vit3d/mixup.hpp"
#include "vit3d/optim.hpp"
#include "vit3d/schedule.hpp"
#include "vit3d/vit.hpp"

namespace vit3d {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double lr = 3e-4;
  double weight_decay = 0.0;
  WeightDecayMode decay_mode = WeightDecayMode::Decoupled;
  int warmup_epochs = 1;  // clamped to epochs - 1
  double eta_min = 0.0;
  MixupConfig mixup;
  bool use_mixup = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool determinism = true;

  void validate() const;
  OptimizerConfig optimizer() const;
};

/// Plain-text config, one `key = value` per line (TOML subset). Keys:
/// epochs, batch_size, lr, wd, wd_mode (decoupled|l2), warmup_epochs, eta_min,
/// mixup (true|false), mixup.alpha, mixup.prob, beta1, beta2, eps, seed,
/// determinism. Unknown keys raise ConfigError.
TrainConfig parse_train_config(std::string_view text, TrainConfig base = {});
std::string train_config_text(const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_auc = 0.0;
  double lr = 0.0;  // rate at the epoch's last step
};

// `epoch,train_loss,val_auc,lr`, values printed with 17 significant digits.
std::string history_csv(const std::vector<EpochRecord>& history);

struct TrainResult {
  ParamStore<float> params;  // best-validation-AUC epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0 when no epoch ran
  double best_val_auc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  // Per-tensor learning-rate multipliers in params order (layer-wise decay).
  std::vector<double> lr_multipliers;
};

/// Seeded shuffling, optional per-batch mixup, scheduled Adam on the mean
/// cross-entropy, validation ROC-AUC after every epoch. Returns the parameters
/// of the epoch with the highest validation AUC (first one on ties).
TrainResult train(const ModelConfig& cfg, const ParamStore<float>& init, const LabeledSet& train_set,
                  const LabeledSet& val_set, const TrainConfig& tc, const TrainHooks& hooks = {});

TrainResult train(const ModelConfig& cfg, const ParamStore<float>& init, const DatasetManifest& manifest,
                  const std::filesystem::path& base_dir, const TrainConfig& tc, const TrainHooks& hooks = {});

// Softmax probability of class 1 for each volume, eval mode.
std::vector<double> predict_scores(const ModelConfig& cfg, const ParamStore<float>& params,
                                   std::span<const Volume> volumes, int batch_size = 16);

/// Loads the source checkpoint, checks the backbone against `cfg`, reinitializes
/// the head when asked or when n_classes differs, then trains with
/// lr = tc.lr * lr_scale and per-tensor layer-wise decay.
TrainResult finetune(const FinetuneConfig& ft, const ModelConfig& cfg, const LabeledSet& train_set,
                     const LabeledSet& val_set, const TrainConfig& tc, const TrainHooks& hooks = {});
ParamStore<float> finetune_init(const FinetuneConfig& ft, const ModelConfig& cfg, std::uint64_t seed);
std::vector<double> layerwise_multipliers(const ModelConfig& cfg, double layerwise_decay);

}  // namespace vit3d
