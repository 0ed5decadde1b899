#include "vit3d/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "vit3d/checkpoint.hpp"
#include "vit3d/error.hpp"
#include "vit3d/metrics.hpp"

namespace vit3d {

namespace {

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected an integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::vector<std::vector<std::size_t>> batches_for_epoch(std::size_t n, int batch_size, CounterRng& rng) {
  auto order = random_permutation(n, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(n, start + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

void check_set(const LabeledSet& set, const ModelConfig& cfg, const char* what) {
  if (set.volumes.empty()) throw ContractError(std::string(what) + " split is empty");
  if (set.labels.size() != set.volumes.size()) throw ContractError(std::string(what) + " labels/volumes differ");
  for (std::size_t i = 0; i < set.volumes.size(); ++i) {
    const auto& d = set.volumes[i].dims;
    if (d != Dims3{cfg.input_dim, cfg.input_dim, cfg.input_dim}) {
      throw ConfigError(std::string(what) + " volume " + std::to_string(i) + " has dims (" + std::to_string(d[0]) + "," +
                        std::to_string(d[1]) + "," + std::to_string(d[2]) + ") but model input_dim is " +
                        std::to_string(cfg.input_dim));
    }
    if (set.labels[i] < 0 || set.labels[i] >= cfg.n_classes) {
      throw ContractError(std::string(what) + " label out of range for n_classes");
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite value >= 0");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (!(eta_min >= 0.0)) throw ConfigError("eta_min must be >= 0");
  mixup.validate();
  optimizer().validate();
}

OptimizerConfig TrainConfig::optimizer() const {
  return OptimizerConfig{beta1, beta2, epsilon, weight_decay, decay_mode};
}

TrainConfig parse_train_config(std::string_view text, TrainConfig cfg) {
  std::istringstream in{std::string(text)};
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("cannot parse train config: ") + e.what());
  }
  for (const auto& item : items) {
    if (item.inputs.empty()) continue;  // section markers
    const std::string key = item.fullname();
    const std::string& v = item.inputs.back();
    if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, v));
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, v));
    else if (key == "lr") cfg.lr = parse_double(key, v);
    else if (key == "wd") cfg.weight_decay = parse_double(key, v);
    else if (key == "wd_mode") {
      if (v == "decoupled") cfg.decay_mode = WeightDecayMode::Decoupled;
      else if (v == "l2") cfg.decay_mode = WeightDecayMode::L2;
      else throw ConfigError("wd_mode must be decoupled or l2, got '" + v + "'");
    } else if (key == "warmup_epochs") cfg.warmup_epochs = static_cast<int>(parse_int(key, v));
    else if (key == "eta_min") cfg.eta_min = parse_double(key, v);
    else if (key == "mixup") cfg.use_mixup = parse_bool(key, v);
    else if (key == "mixup.alpha") cfg.mixup.alpha = parse_double(key, v);
    else if (key == "mixup.prob") cfg.mixup.batch_probability = parse_double(key, v);
    else if (key == "beta1") cfg.beta1 = parse_double(key, v);
    else if (key == "beta2") cfg.beta2 = parse_double(key, v);
    else if (key == "eps") cfg.epsilon = parse_double(key, v);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, v));
    else if (key == "determinism") cfg.determinism = parse_bool(key, v);
    else throw ConfigError("unknown train config key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

std::string train_config_text(const TrainConfig& c) {
  std::ostringstream out;
  out << "epochs = " << c.epochs << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "lr = " << fmt(c.lr) << '\n'
      << "wd = " << fmt(c.weight_decay) << '\n'
      << "wd_mode = \"" << (c.decay_mode == WeightDecayMode::L2 ? "l2" : "decoupled") << "\"\n"
      << "warmup_epochs = " << c.warmup_epochs << '\n'
      << "eta_min = " << fmt(c.eta_min) << '\n'
      << "mixup = " << (c.use_mixup ? "true" : "false") << '\n'
      << "mixup.alpha = " << fmt(c.mixup.alpha) << '\n'
      << "mixup.prob = " << fmt(c.mixup.batch_probability) << '\n'
      << "beta1 = " << fmt(c.beta1) << '\n'
      << "beta2 = " << fmt(c.beta2) << '\n'
      << "eps = " << fmt(c.epsilon) << '\n'
      << "seed = " << c.seed << '\n'
      << "determinism = " << (c.determinism ? "true" : "false") << '\n';
  return out.str();
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,val_auc,lr\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.val_auc) + "," + fmt(r.lr) + "\n";
  }
  return out;
}

std::vector<double> predict_scores(const ModelConfig& cfg, const ParamStore<float>& params,
                                   std::span<const Volume> volumes, int batch_size) {
  if (batch_size < 1) throw ContractError("predict_scores: batch_size must be >= 1");
  if (cfg.n_classes < 2) throw ContractError("predict_scores: needs at least 2 classes");
  std::vector<double> scores;
  scores.reserve(volumes.size());
  for (std::size_t start = 0; start < volumes.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto n = std::min(volumes.size() - start, static_cast<std::size_t>(batch_size));
    const auto logits = predict_logits<float>(params, volumes.subspan(start, n), cfg);
    const auto L = logits.as_matrix(static_cast<Index>(n), cfg.n_classes);
    for (Index r = 0; r < L.rows(); ++r) {
      const Eigen::ArrayXd row = L.row(r).cast<double>().transpose().array();
      const Eigen::ArrayXd e = (row - row.maxCoeff()).exp();
      scores.push_back(e[1] / e.sum());
    }
  }
  return scores;
}

TrainResult train(const ModelConfig& cfg, const ParamStore<float>& init, const LabeledSet& train_set,
                  const LabeledSet& val_set, const TrainConfig& tc, const TrainHooks& hooks) {
  cfg.validate();
  tc.validate();
  check_params(init, cfg);
  check_set(train_set, cfg, "train");
  check_set(val_set, cfg, "val");
  const auto val_pos = std::count(val_set.labels.begin(), val_set.labels.end(), 1);
  if (val_pos == 0 || val_pos == static_cast<std::ptrdiff_t>(val_set.labels.size())) {
    throw ContractError("val split must contain both classes for ROC-AUC model selection");
  }
  if (!hooks.lr_multipliers.empty() && hooks.lr_multipliers.size() != init.size()) {
    throw ContractError("train: lr multiplier count differs from parameter count");
  }

  TrainResult result;
  result.params = init;
  if (tc.epochs == 0) return result;

  const std::size_t n = train_set.volumes.size();
  ScheduleConfig sched;
  sched.total_epochs = tc.epochs;
  sched.warmup_epochs = std::min(tc.warmup_epochs, tc.epochs - 1);
  sched.eta_min = tc.eta_min;
  sched.steps_per_epoch = static_cast<int>((n + static_cast<std::size_t>(tc.batch_size) - 1) / tc.batch_size);
  const auto opt = tc.optimizer();
  const auto* multipliers = hooks.lr_multipliers.empty() ? nullptr : &hooks.lr_multipliers;

  ParamStore<float> params = init;
  AdamState state;
  DropoutStream drop{splitmix64_mix(tc.seed ^ fnv1a64("dropout")), 0};
  ForwardOptions fwd{true, &drop};
  std::int64_t step = 0;
  double best = -std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    CounterRng shuffle_rng(tc.seed, fnv1a64("shuffle") + static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    double lr = 0.0;
    for (const auto& idx : batches_for_epoch(n, tc.batch_size, shuffle_rng)) {
      CounterRng mix_rng(tc.seed, fnv1a64("mixup") + static_cast<std::uint64_t>(step));
      std::vector<Volume> volumes;
      std::vector<int> labels;
      for (auto i : idx) {
        volumes.push_back(train_set.volumes[i]);
        labels.push_back(train_set.labels[i]);
      }
      MixedBatch batch;
      if (tc.use_mixup && mix_rng.uniform() < tc.mixup.batch_probability) {
        batch = mixup_batch(volumes, labels, tc.mixup, mix_rng);
      } else {
        batch.volumes = std::move(volumes);
        batch.labels_a = labels;
        batch.labels_b = std::move(labels);
      }

      Tape<float> tape;
      auto vars = bind_params(tape, params, true);
      auto patches = tape.constant(extract_patches<float>(batch.volumes, cfg));
      auto logits = classify(patches, cfg, vars, fwd);
      auto loss = mixup_loss(logits, batch.labels_a, batch.labels_b, batch.lambda);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw NumericFault("non-finite training loss at epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(step) + " (lr " + fmt(lr_at(step, sched, tc.lr)) + ")");
      }
      const auto grads = tape.backward(loss);
      lr = lr_at(step, sched, tc.lr);
      adam_step(params, grads, state, opt, lr, multipliers);
      loss_sum += value * static_cast<double>(idx.size());
      ++step;
    }

    const auto scores = predict_scores(cfg, params, val_set.volumes, tc.batch_size);
    EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(n), roc_auc({scores, val_set.labels}), lr};
    result.history.push_back(rec);
    if (rec.val_auc > best) {
      best = rec.val_auc;
      result.params = params;
      result.best_epoch = rec.epoch;
      result.best_val_auc = rec.val_auc;
    }
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  return result;
}

TrainResult train(const ModelConfig& cfg, const ParamStore<float>& init, const DatasetManifest& manifest,
                  const std::filesystem::path& base_dir, const TrainConfig& tc, const TrainHooks& hooks) {
  const auto train_set = load_split(manifest, Split::Train, base_dir);
  const auto val_set = load_split(manifest, Split::Val, base_dir);
  return train(cfg, init, train_set, val_set, tc, hooks);
}

std::vector<double> layerwise_multipliers(const ModelConfig& cfg, double layerwise_decay) {
  std::vector<double> out;
  for (const auto& [name, shape] : param_shapes(cfg)) out.push_back(layerwise_lr(name, cfg, layerwise_decay, 1.0));
  return out;
}

ParamStore<float> finetune_init(const FinetuneConfig& ft, const ModelConfig& cfg, std::uint64_t seed) {
  ft.validate();
  auto ck = load_checkpoint(ft.source_checkpoint);
  bool head_mismatch = false;
  try {
    check_compatible(ck.config, cfg);
  } catch (const HeadMismatchError&) {
    head_mismatch = true;
  }
  ParamStore<float> params;
  const auto shapes = param_shapes(cfg);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& [name, shape] = shapes[i];
    if (is_head_param(name) && head_mismatch) {
      params.insert(name, Tensor<float>::zeros(shape));
    } else {
      params.insert(name, ck.params.at(name));
    }
  }
  if (ft.reinit_head || head_mismatch) reinit_head(params, cfg, seed ^ fnv1a64("head"));
  check_params(params, cfg);
  return params;
}

TrainResult finetune(const FinetuneConfig& ft, const ModelConfig& cfg, const LabeledSet& train_set,
                     const LabeledSet& val_set, const TrainConfig& tc, const TrainHooks& hooks) {
  const auto init = finetune_init(ft, cfg, tc.seed);
  TrainConfig scaled = tc;
  scaled.lr = tc.lr * ft.lr_scale;
  TrainHooks h = hooks;
  if (ft.layerwise_decay != 1.0) h.lr_multipliers = layerwise_multipliers(cfg, ft.layerwise_decay);
  return train(cfg, init, train_set, val_set, scaled, h);
}

}  // namespace vit3d
