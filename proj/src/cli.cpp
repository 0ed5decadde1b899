#include "vit3d/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "json.hpp"
#include "vit3d/binary_io.hpp"
#include "vit3d/checkpoint.hpp"
#include "vit3d/dataset.hpp"
#include "vit3d/error.hpp"
#include "vit3d/experiments.hpp"
#include "vit3d/metrics.hpp"
#include "vit3d/search.hpp"
#include "vit3d/train.hpp"
#include "vit3d/vit.hpp"
#include "vit3d/volume.hpp"

namespace vit3d {

namespace fs = std::filesystem;
using nlohmann::json;

std::string group_thousands(long long n) {
  std::string digits = std::to_string(n < 0 ? -n : n);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return n < 0 ? "-" + out : out;
}

namespace {

void log_event(std::ostream& err, const json& j) { err << j.dump() << std::endl; }

std::string format_value(int v) { return std::to_string(v); }
std::string format_value(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

ModelConfig preset_config(const std::string& name) {
  if (name == "nit") return nit_default();
  if (name == "vit_b16") return vit_b16_3d();
  if (name == "tiny") return ModelConfig{32, 8, 64, 2, 2, 4.0, 0.1, 2};
  throw ConfigError("unknown model preset '" + name + "', expected nit, vit_b16 or tiny");
}

struct ModelOptions {
  std::string preset = "nit";
  ModelConfig raw;
  CLI::Option* preset_opt = nullptr;
  struct Field {
    CLI::Option* opt;
    std::function<void(ModelConfig&, const ModelConfig&)> set;
    std::function<std::string(const ModelConfig&)> show;
  };
  std::vector<Field> fields;

  void add(CLI::App* sub) {
    preset_opt = sub->add_option("--preset", preset, "Model preset: nit, vit_b16 or tiny");
    auto field = [&](const char* name, auto member, const char* help) {
      auto* opt = sub->add_option(name, raw.*member, help);
      fields.push_back({opt, [member](ModelConfig& dst, const ModelConfig& src) { dst.*member = src.*member; },
                        [member](const ModelConfig& c) { return format_value(c.*member); }});
    };
    field("--input_dim", &ModelConfig::input_dim, "Cubic input side D");
    field("--patch_size", &ModelConfig::patch_size, "Cubic patch side p");
    field("--hidden_dim", &ModelConfig::hidden_dim, "Hidden size h");
    field("--n_layers", &ModelConfig::n_layers, "Encoder blocks L");
    field("--n_heads", &ModelConfig::n_heads, "Attention heads H");
    field("--mlp_ratio", &ModelConfig::mlp_ratio, "MLP width multiple");
    field("--dropout", &ModelConfig::dropout_rate, "Dropout rate");
    field("--n_classes", &ModelConfig::n_classes, "Output classes");
  }

  bool any_given() const {
    if (preset_opt->count()) return true;
    for (const auto& f : fields) {
      if (f.opt->count()) return true;
    }
    return false;
  }

  // Preset (or `base` when no preset was given), then explicit field overrides.
  ModelConfig resolve(const ModelConfig* base = nullptr) const {
    ModelConfig cfg = (base && !preset_opt->count()) ? *base : preset_config(preset);
    for (const auto& f : fields) {
      if (f.opt->count()) f.set(cfg, raw);
    }
    cfg.validate();
    return cfg;
  }

  // Option name -> value of the resolved config, for config.toml.
  std::map<std::string, std::string> effective(const ModelConfig& cfg) const {
    std::map<std::string, std::string> out;
    for (const auto& f : fields) out[f.opt->get_lnames().front()] = f.show(cfg);
    return out;
  }
};

struct TrainOptions {
  TrainConfig cfg;
  std::string wd_mode = "decoupled";

  void add(CLI::App* sub) {
    sub->add_option("--epochs", cfg.epochs, "Training epochs");
    sub->add_option("--batch_size", cfg.batch_size, "Batch size");
    sub->add_option("--lr", cfg.lr, "Peak learning rate");
    sub->add_option("--wd", cfg.weight_decay, "Weight decay");
    sub->add_option("--wd_mode", wd_mode, "decoupled or l2");
    sub->add_option("--warmup_epochs", cfg.warmup_epochs, "Linear warmup epochs");
    sub->add_option("--eta_min", cfg.eta_min, "Cosine floor");
    sub->add_option("--mixup", cfg.use_mixup, "Enable mixup");
    sub->add_option("--mixup.alpha", cfg.mixup.alpha, "Beta(alpha, alpha) for lambda");
    sub->add_option("--mixup.prob", cfg.mixup.batch_probability, "Probability a batch is mixed");
    sub->add_option("--beta1", cfg.beta1, "Adam beta1");
    sub->add_option("--beta2", cfg.beta2, "Adam beta2");
    sub->add_option("--eps", cfg.epsilon, "Adam epsilon");
  }

  TrainConfig resolve(std::uint64_t seed, bool determinism) const {
    TrainConfig c = cfg;
    if (wd_mode == "decoupled") c.decay_mode = WeightDecayMode::Decoupled;
    else if (wd_mode == "l2") c.decay_mode = WeightDecayMode::L2;
    else throw ConfigError("wd_mode must be decoupled or l2, got '" + wd_mode + "'");
    c.seed = seed;
    c.determinism = determinism;
    c.validate();
    return c;
  }
};

struct Common {
  std::string config;
  fs::path out;
  int threads = 1;
  std::uint64_t seed = 0;
  bool determinism = true;

  void add(CLI::App* sub) {
    sub->add_option("--config", config, "Config file of key = value lines; flags override it")->configurable(false);
    sub->add_option("--out", out, "Output directory (default $VIT3D_OUTPUT_ROOT/<command>)");
    sub->add_option("--threads", threads, "Worker thread cap");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--determinism", determinism, "Fixed reduction order and seeded streams");
  }

  fs::path out_dir(const std::string& command) const {
    fs::path dir = out;
    if (dir.empty()) {
      const char* root = std::getenv("VIT3D_OUTPUT_ROOT");
      dir = fs::path(root && *root ? root : "vit3d_out") / command;
    }
    fs::create_directories(dir);
    return dir;
  }
};

std::string toml_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

// Every option of the subcommand with its effective value, loadable via --config.
void write_resolved_config(const CLI::App* sub, const fs::path& dir,
                           const std::map<std::string, std::string>& effective = {}) {
  std::string text = "# resolved configuration for `" + sub->get_name() + "`\n";
  for (const auto* opt : sub->get_options()) {
    if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
    const auto& name = opt->get_lnames().front();
    if (name == "help") continue;
    std::string value = opt->count() ? opt->results().back() : opt->get_default_str();
    if (auto it = effective.find(name); it != effective.end()) value = it->second;
    if (value.empty()) continue;
    text += name + " = " + toml_quote(value) + "\n";
  }
  io::write_file_atomic(dir / "config.toml", text);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + ": '" + item + "' is not a number");
    }
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(s)) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("seeds: '" + item + "' is not an unsigned integer");
    }
  }
  return out;
}

fs::path base_dir_of(const fs::path& manifest) {
  auto parent = manifest.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

DatasetManifest absolutize(DatasetManifest m, const fs::path& base) {
  for (auto& e : m.entries) {
    fs::path p(e.path);
    if (p.is_relative()) e.path = fs::absolute(base / p).lexically_normal().string();
  }
  return m;
}

json checkpoint_metadata(const std::string& command, const TrainConfig& tc, const TrainResult& r) {
  return {{"command", command},
          {"seed", tc.seed},
          {"epochs", tc.epochs},
          {"best_epoch", r.best_epoch},
          {"best_val_auc", r.best_epoch ? json(r.best_val_auc) : json()},
          {"train_config", train_config_text(tc)}};
}

TrainHooks epoch_logger(std::ostream& err, const std::string& command) {
  TrainHooks hooks;
  hooks.on_epoch = [&err, command](const EpochRecord& r) {
    log_event(err, {{"event", "epoch"}, {"command", command}, {"epoch", r.epoch}, {"train_loss", r.train_loss},
                    {"val_auc", r.val_auc}, {"lr", r.lr}});
  };
  return hooks;
}

void write_training_outputs(const fs::path& dir, const ModelConfig& cfg, const TrainConfig& tc, const TrainResult& r,
                            const std::string& command) {
  io::write_file_atomic(dir / "history.csv", history_csv(r.history));
  save_checkpoint(dir / "checkpoint.vtck", cfg, r.params, checkpoint_metadata(command, tc, r));
}

struct Command {
  CLI::App* app = nullptr;
  std::function<void()> run;
};

}  // namespace

int cli_main(const std::vector<std::string>& input_args, std::ostream& out, std::ostream& err) {
  CLI::App app("Volumetric vision-transformer training and evaluation", "vit3d");
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
  app.require_subcommand(1);
  std::map<std::string, Command> commands;
  auto add_command = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    commands[name].app = sub;
    return sub;
  };

  // synth
  Common synth_common;
  SynthSpec synth_spec;
  int synth_dim = 32;
  SplitFractions synth_fr;
  {
    auto* sub = add_command("synth", "Generate a synthetic labelled dataset and manifest");
    synth_common.add(sub);
    sub->add_option("--n_per_class", synth_spec.n_per_class, "Volumes per class");
    sub->add_option("--dim", synth_dim, "Cubic volume side");
    sub->add_option("--effect_size", synth_spec.effect_size, "Class-1 ellipsoid offset in noise SDs");
    sub->add_option("--noise_sigma", synth_spec.noise_sigma, "Noise standard deviation");
    sub->add_option("--train_frac", synth_fr.train, "Train subject fraction");
    sub->add_option("--val_frac", synth_fr.val, "Val subject fraction");
    sub->add_option("--test_frac", synth_fr.test, "Test subject fraction");
    commands["synth"].run = [&, sub] {
      synth_spec.dims = {synth_dim, synth_dim, synth_dim};
      synth_spec.seed = synth_common.seed;
      const auto dir = synth_common.out_dir("synth");
      auto [volumes, manifest] = generate_synthetic(synth_spec);
      for (std::size_t i = 0; i < volumes.size(); ++i) write_raw(dir / manifest.entries[i].path, volumes[i]);
      manifest = split_by_subject(manifest.entries, synth_fr, synth_common.seed);
      write_manifest(dir / "manifest.csv", manifest);
      write_resolved_config(sub, dir);
      log_event(err, {{"event", "synth"}, {"volumes", volumes.size()}, {"out", dir.string()}});
    };
  }

  // prep
  Common prep_common;
  fs::path prep_manifest;
  int prep_dim = 80;
  std::string prep_norm = "zscore";
  {
    auto* sub = add_command("prep", "Resize and normalize NIfTI/raw volumes into raw volumes plus manifest");
    prep_common.add(sub);
    sub->add_option("--manifest", prep_manifest, "Input manifest")->required();
    sub->add_option("--dim", prep_dim, "Target cubic side");
    sub->add_option("--normalization", prep_norm, "zscore or minmax");
    commands["prep"].run = [&, sub] {
      const auto mode = parse_normalization(prep_norm);
      const auto in = read_manifest(prep_manifest);
      const auto base = base_dir_of(prep_manifest);
      const auto dir = prep_common.out_dir("prep");
      DatasetManifest outm;
      char name[32];
      for (std::size_t i = 0; i < in.entries.size(); ++i) {
        auto e = in.entries[i];
        fs::path p(e.path);
        if (p.is_relative()) p = base / p;
        auto v = normalize(resize_trilinear(read_volume(p), {prep_dim, prep_dim, prep_dim}), mode);
        std::snprintf(name, sizeof(name), "%05zu_", i);
        e.path = std::string(name) + p.stem().string() + ".vol";
        write_raw(dir / e.path, v);
        outm.entries.push_back(std::move(e));
      }
      write_manifest(dir / "manifest.csv", outm);
      write_resolved_config(sub, dir);
      log_event(err, {{"event", "prep"}, {"volumes", outm.entries.size()}, {"out", dir.string()}});
    };
  }

  // split
  Common split_common;
  fs::path split_manifest;
  SplitFractions split_fr;
  {
    auto* sub = add_command("split", "Assign train/val/test splits per subject");
    split_common.add(sub);
    sub->add_option("--manifest", split_manifest, "Input manifest")->required();
    sub->add_option("--train_frac", split_fr.train, "Train subject fraction");
    sub->add_option("--val_frac", split_fr.val, "Val subject fraction");
    sub->add_option("--test_frac", split_fr.test, "Test subject fraction");
    commands["split"].run = [&, sub] {
      const auto in = absolutize(read_manifest(split_manifest), base_dir_of(split_manifest));
      const auto dir = split_common.out_dir("split");
      write_manifest(dir / "manifest.csv", split_by_subject(in.entries, split_fr, split_common.seed));
      write_resolved_config(sub, dir);
    };
  }

  // train
  Common train_common;
  ModelOptions train_model;
  TrainOptions train_opts;
  fs::path train_manifest, train_init;
  {
    auto* sub = add_command("train", "Train a model from a manifest");
    train_common.add(sub);
    train_model.add(sub);
    train_opts.add(sub);
    sub->add_option("--manifest", train_manifest, "Manifest with train and val splits")->required();
    sub->add_option("--init", train_init, "Start from this checkpoint instead of a fresh init");
    commands["train"].run = [&, sub] {
      const auto cfg = train_model.resolve();
      const auto tc = train_opts.resolve(train_common.seed, train_common.determinism);
      const auto dir = train_common.out_dir("train");
      write_resolved_config(sub, dir, train_model.effective(cfg));
      const auto init = train_init.empty() ? init_params(cfg, tc.seed) : load_checkpoint(train_init, cfg).params;
      const auto result =
          train(cfg, init, read_manifest(train_manifest), base_dir_of(train_manifest), tc, epoch_logger(err, "train"));
      write_training_outputs(dir, cfg, tc, result, "train");
      log_event(err, {{"event", "done"}, {"best_epoch", result.best_epoch}, {"out", dir.string()}});
    };
  }

  // finetune
  Common ft_common;
  ModelOptions ft_model;
  TrainOptions ft_opts;
  FinetuneConfig ft_cfg;
  fs::path ft_manifest;
  {
    auto* sub = add_command("finetune", "Fine-tune a pretrained checkpoint with layer-wise LR decay");
    ft_common.add(sub);
    ft_model.add(sub);
    ft_opts.add(sub);
    sub->add_option("--manifest", ft_manifest, "Manifest with train and val splits")->required();
    sub->add_option("--checkpoint", ft_cfg.source_checkpoint, "Pretrained checkpoint")->required();
    sub->add_option("--layerwise_decay", ft_cfg.layerwise_decay, "Per-depth LR decay (1 disables)");
    sub->add_option("--reinit_head", ft_cfg.reinit_head, "Reinitialize the classification head");
    sub->add_option("--lr_scale", ft_cfg.lr_scale, "Multiplier on lr for fine-tuning");
    commands["finetune"].run = [&, sub] {
      const auto source = load_checkpoint(ft_cfg.source_checkpoint);
      const auto cfg = ft_model.resolve(&source.config);
      const auto tc = ft_opts.resolve(ft_common.seed, ft_common.determinism);
      const auto dir = ft_common.out_dir("finetune");
      write_resolved_config(sub, dir, ft_model.effective(cfg));
      const auto manifest = read_manifest(ft_manifest);
      const auto base = base_dir_of(ft_manifest);
      const auto result = finetune(ft_cfg, cfg, load_split(manifest, Split::Train, base),
                                   load_split(manifest, Split::Val, base), tc, epoch_logger(err, "finetune"));
      write_training_outputs(dir, cfg, tc, result, "finetune");
      log_event(err, {{"event", "done"}, {"best_epoch", result.best_epoch}, {"out", dir.string()}});
    };
  }

  // eval
  Common eval_common;
  fs::path eval_ckpt, eval_manifest;
  std::string eval_split = "test";
  int eval_batch = 16;
  {
    auto* sub = add_command("eval", "Evaluate a checkpoint on a manifest split");
    eval_common.add(sub);
    sub->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required();
    sub->add_option("--manifest", eval_manifest, "Manifest")->required();
    sub->add_option("--split", eval_split, "train, val, test or all");
    sub->add_option("--batch_size", eval_batch, "Inference batch size");
    commands["eval"].run = [&, sub] {
      const auto ck = load_checkpoint(eval_ckpt);
      const auto manifest = read_manifest(eval_manifest);
      const auto base = base_dir_of(eval_manifest);
      const auto set = eval_split == "all" ? load_all(manifest, base) : load_split(manifest, parse_split(eval_split), base);
      if (set.volumes.empty()) throw ConfigError("split '" + eval_split + "' of the manifest is empty");
      const auto dir = eval_common.out_dir("eval");
      write_resolved_config(sub, dir);
      const auto scores = predict_scores(ck.config, ck.params, set.volumes, eval_batch);
      const auto rep = report({scores, set.labels});
      io::write_file_atomic(dir / "metrics.json", report_to_json(rep).dump(2) + "\n");
      io::write_file_atomic(dir / "metrics.csv", report_csv(rep));
      std::string sc = "subject_id,label,score\n";
      char buf[64];
      for (std::size_t i = 0; i < scores.size(); ++i) {
        std::snprintf(buf, sizeof(buf), ",%d,%.17g\n", set.labels[i], scores[i]);
        sc += set.subjects[i] + buf;
      }
      io::write_file_atomic(dir / "scores.csv", sc);
      log_event(err, {{"event", "eval"}, {"auc", rep.auc}, {"threshold", rep.threshold}, {"out", dir.string()}});
    };
  }

  // search
  Common search_common;
  ModelOptions search_model;
  TrainOptions search_opts;
  SearchSpace space;
  fs::path search_manifest;
  std::string warmup_choices = "1,5,10,15", heads_choices = "2,4,8,12", layers_choices = "3,4,6";
  {
    auto* sub = add_command("search", "Random hyperparameter search");
    search_common.add(sub);
    search_model.add(sub);
    search_opts.add(sub);
    sub->add_option("--manifest", search_manifest, "Manifest with train and val splits")->required();
    sub->add_option("--n_trials", space.n_trials, "Number of trials");
    sub->add_option("--lr_min", space.lr_min, "Lower lr bound");
    sub->add_option("--lr_max", space.lr_max, "Upper lr bound");
    sub->add_option("--wd_min", space.wd_min, "Lower weight decay bound");
    sub->add_option("--wd_max", space.wd_max, "Upper weight decay bound");
    sub->add_option("--warmup_choices", warmup_choices, "Comma-separated warmup epochs");
    sub->add_option("--heads_choices", heads_choices, "Comma-separated head counts");
    sub->add_option("--layers_choices", layers_choices, "Comma-separated layer counts");
    commands["search"].run = [&, sub] {
      auto ints = [](const std::string& s, const char* what) {
        std::vector<int> v;
        for (double x : parse_doubles(s, what)) v.push_back(static_cast<int>(x));
        return v;
      };
      space.warmup_choices = ints(warmup_choices, "warmup_choices");
      space.heads_choices = ints(heads_choices, "heads_choices");
      space.layers_choices = ints(layers_choices, "layers_choices");
      space.seed = search_common.seed;
      const auto base_cfg = search_model.resolve();
      const auto tc = search_opts.resolve(search_common.seed, search_common.determinism);
      const auto dir = search_common.out_dir("search");
      write_resolved_config(sub, dir, search_model.effective(base_cfg));
      const auto manifest = read_manifest(search_manifest);
      const auto base = base_dir_of(search_manifest);
      const auto train_set = load_split(manifest, Split::Train, base);
      const auto val_set = load_split(manifest, Split::Val, base);
      const auto ranked = random_search(space, [&](const Trial& t) {
        ModelConfig cfg = base_cfg;
        cfg.n_heads = t.n_heads;
        cfg.n_layers = t.n_layers;
        cfg.hidden_dim = (cfg.hidden_dim + t.n_heads - 1) / t.n_heads * t.n_heads;
        TrainConfig trial_tc = tc;
        trial_tc.lr = t.lr;
        trial_tc.weight_decay = t.weight_decay;
        trial_tc.warmup_epochs = t.warmup_epochs;
        const auto r = train(cfg, init_params(cfg, tc.seed), train_set, val_set, trial_tc);
        log_event(err, {{"event", "trial"}, {"index", t.index}, {"val_auc", r.best_val_auc}});
        return r.best_val_auc;
      });
      json j = json::array();
      for (const auto& r : ranked) j.push_back(trial_to_json(r));
      io::write_file_atomic(dir / "search.json", j.dump(2) + "\n");
      io::write_file_atomic(dir / "search.csv", search_csv(ranked));
    };
  }

  // scaling
  Common sc_common;
  ModelOptions sc_model;
  TrainOptions sc_opts;
  fs::path sc_manifest, sc_zeroshot;
  std::string sc_fractions = "0.1,0.25,0.5,0.75,1", sc_seeds = "0,1,2";
  bool sc_transformer = true, sc_baseline = true;
  ForestConfig sc_forest;
  GlcmConfig sc_glcm;
  {
    auto* sub = add_command("scaling", "Data-scaling experiment: transformer vs radiomics forest");
    sc_common.add(sub);
    sc_model.add(sub);
    sc_opts.add(sub);
    sub->add_option("--manifest", sc_manifest, "Manifest with train, val and test splits")->required();
    sub->add_option("--zeroshot_manifest", sc_zeroshot, "Second dataset, evaluated without tuning");
    sub->add_option("--fractions", sc_fractions, "Comma-separated training fractions");
    sub->add_option("--seeds", sc_seeds, "Comma-separated seeds");
    sub->add_option("--transformer", sc_transformer, "Run the transformer");
    sub->add_option("--baseline", sc_baseline, "Run the radiomics forest baseline");
    sub->add_option("--n_trees", sc_forest.n_trees, "Forest size");
    sub->add_option("--glcm_levels", sc_glcm.n_levels, "GLCM gray levels");
    commands["scaling"].run = [&, sub] {
      ScalingSpec spec;
      spec.fractions = parse_doubles(sc_fractions, "fractions");
      spec.seeds = parse_seeds(sc_seeds);
      spec.transformer = sc_transformer;
      spec.baseline = sc_baseline;
      spec.forest = sc_forest;
      spec.glcm = sc_glcm;
      spec.model = sc_model.resolve();
      spec.train = sc_opts.resolve(sc_common.seed, sc_common.determinism);
      const auto dir = sc_common.out_dir("scaling");
      write_resolved_config(sub, dir, sc_model.effective(spec.model));
      const auto manifest = read_manifest(sc_manifest);
      const auto base = base_dir_of(sc_manifest);
      spec.train_pool = load_split(manifest, Split::Train, base);
      spec.val_set = load_split(manifest, Split::Val, base);
      spec.eval_sets["test"] = load_split(manifest, Split::Test, base);
      if (!sc_zeroshot.empty()) spec.eval_sets["zeroshot"] = load_all(read_manifest(sc_zeroshot), base_dir_of(sc_zeroshot));
      spec.store_dir = dir / "cells";
      const auto result = run_scaling(spec, [&err](const CellRecord& c) {
        json j{{"event", "cell"}, {"model", c.model}, {"fraction", c.fraction}, {"seed", c.seed}, {"ok", c.ok},
               {"reused", c.reused}};
        if (!c.ok) j["error"] = c.error;
        for (const auto& [name, r] : c.reports) j["auc_" + name] = r.auc;
        log_event(err, j);
      });
      emit_outputs(result, dir);
    };
  }

  // params
  ModelOptions params_model;
  {
    auto* sub = add_command("params", "Print the parameter count of a model config");
    params_model.add(sub);
    commands["params"].run = [&] { out << group_thousands(count_params(params_model.resolve())) << '\n'; };
  }

  int threads = 1;
  try {
    // Config files become leading `--key value` pairs so later flags win.
    std::vector<std::string> args = input_args;
    if (args.size() >= 2 && commands.count(args[1])) {
      CLI::App* sub = commands[args[1]].app;
      std::string config_path;
      for (std::size_t i = 2; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
      }
      if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot read config file " + config_path);
        std::vector<CLI::ConfigItem> items;
        try {
          items = CLI::ConfigTOML().from_config(in);
        } catch (const CLI::Error& e) {
          throw ConfigError("cannot parse config file " + config_path + ": " + e.what());
        }
        std::vector<std::string> injected;
        for (const auto& item : items) {
          if (item.inputs.empty()) continue;
          const auto key = item.fullname();
          const auto* opt = sub->get_option_no_throw("--" + key);
          if (!opt || !opt->get_configurable()) {
            throw ConfigError("unknown key '" + key + "' in config file " + config_path + " for `" + args[1] + "`");
          }
          std::string value;
          for (std::size_t k = 0; k < item.inputs.size(); ++k) value += (k ? "," : "") + item.inputs[k];
          injected.push_back("--" + key);
          injected.push_back(value);
        }
        args.insert(args.begin() + 2, injected.begin(), injected.end());
      }
    }
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());

    for (auto& [name, cmd] : commands) {
      if (!cmd.app->parsed()) continue;
      for (const auto* common : {&synth_common, &prep_common, &split_common, &train_common, &ft_common, &eval_common,
                                 &search_common, &sc_common}) {
        if (common->threads > 1) threads = common->threads;
      }
      if (threads < 1) throw ConfigError("--threads must be >= 1");
      Eigen::setNbThreads(threads);
      cmd.run();
    }
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericFault& e) {
    err << "numeric fault: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace vit3d
