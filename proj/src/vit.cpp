#include "vit3d/vit.hpp"

#include <cmath>
#include <string>

#include "vit3d/error.hpp"
#include "vit3d/rng.hpp"

namespace vit3d {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ConfigError(std::string(what) + " must be positive, got " + std::to_string(v));
  };
  positive(input_dim, "input_dim");
  positive(patch_size, "patch_size");
  positive(hidden_dim, "hidden_dim");
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(n_classes, "n_classes");
  if (input_dim % patch_size != 0) {
    throw ConfigError("input_dim " + std::to_string(input_dim) + " is not divisible by patch_size " +
                      std::to_string(patch_size));
  }
  if (hidden_dim % n_heads != 0) {
    throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (!(mlp_ratio > 0.0) || mlp_hidden() < 1) throw ConfigError("mlp_ratio must give an MLP width >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
}

ModelConfig vit_b16_3d() {
  ModelConfig c;
  c.input_dim = 80;
  c.patch_size = 16;
  c.hidden_dim = 768;
  c.n_layers = 12;
  c.n_heads = 12;
  c.mlp_ratio = 4.0;
  c.dropout_rate = 0.1;
  c.n_classes = 2;
  return c;
}

ModelConfig nit_default() {
  ModelConfig c;
  c.input_dim = 80;
  c.patch_size = 8;
  c.hidden_dim = 256;
  c.n_layers = 6;
  c.n_heads = 8;
  c.mlp_ratio = 4.0;
  c.dropout_rate = 0.3;
  c.n_classes = 2;
  return c;
}

std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& cfg) {
  cfg.validate();
  const Index h = cfg.hidden_dim;
  const Index m = cfg.mlp_hidden();
  std::vector<std::pair<std::string, Shape>> shapes;
  shapes.emplace_back("patch_embed.weight", Shape{cfg.patch_volume(), h});
  shapes.emplace_back("patch_embed.bias", Shape{h});
  shapes.emplace_back("pos_embed", Shape{cfg.seq_len(), h});
  shapes.emplace_back("cls_token", Shape{h});
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string b = "block" + std::to_string(i) + ".";
    shapes.emplace_back(b + "ln1.weight", Shape{h});
    shapes.emplace_back(b + "ln1.bias", Shape{h});
    shapes.emplace_back(b + "attn.qkv.weight", Shape{h, 3 * h});
    shapes.emplace_back(b + "attn.qkv.bias", Shape{3 * h});
    shapes.emplace_back(b + "attn.out.weight", Shape{h, h});
    shapes.emplace_back(b + "attn.out.bias", Shape{h});
    shapes.emplace_back(b + "ln2.weight", Shape{h});
    shapes.emplace_back(b + "ln2.bias", Shape{h});
    shapes.emplace_back(b + "mlp.fc1.weight", Shape{h, m});
    shapes.emplace_back(b + "mlp.fc1.bias", Shape{m});
    shapes.emplace_back(b + "mlp.fc2.weight", Shape{m, h});
    shapes.emplace_back(b + "mlp.fc2.bias", Shape{h});
  }
  shapes.emplace_back("norm.weight", Shape{h});
  shapes.emplace_back("norm.bias", Shape{h});
  shapes.emplace_back("head.weight", Shape{h, cfg.n_classes});
  shapes.emplace_back("head.bias", Shape{cfg.n_classes});
  return shapes;
}

std::int64_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t h = cfg.hidden_dim;
  const std::int64_t m = cfg.mlp_hidden();
  const std::int64_t p3 = cfg.patch_volume();
  const std::int64_t tokens = cfg.seq_len();
  const std::int64_t c = cfg.n_classes;
  const std::int64_t per_block = (3 * h * h + 3 * h) + (h * h + h) + 4 * h + (2 * m * h + m + h);
  return (p3 * h + h) + tokens * h + h + cfg.n_layers * per_block + 2 * h + (h * c + c);
}

int param_depth(const std::string& name, const ModelConfig& cfg) {
  if (name.rfind("patch_embed.", 0) == 0 || name == "pos_embed" || name == "cls_token") return 0;
  if (name.rfind("norm.", 0) == 0 || name.rfind("head.", 0) == 0) return cfg.n_layers + 1;
  if (name.rfind("block", 0) == 0) {
    const auto dot = name.find('.');
    if (dot != std::string::npos && dot > 5) {
      const auto digits = name.substr(5, dot - 5);
      if (digits.find_first_not_of("0123456789") == std::string::npos) {
        const int i = std::stoi(digits);
        if (i < cfg.n_layers) return i + 1;
      }
    }
  }
  throw ContractError("unknown parameter name '" + name + "'");
}

bool is_head_param(const std::string& name) { return name.rfind("head.", 0) == 0; }

bool is_norm_or_bias(const std::string& name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".bias") || name.rfind("norm.", 0) == 0 || name.find(".ln1.") != std::string::npos ||
         name.find(".ln2.") != std::string::npos;
}

namespace {

Tensor<float> init_tensor(const std::string& name, const Shape& shape, std::uint64_t seed) {
  auto t = Tensor<float>::zeros(shape);
  const bool is_gain = name == "norm.weight" || name.find(".ln1.weight") != std::string::npos ||
                       name.find(".ln2.weight") != std::string::npos;
  if (is_gain) {
    t.array().setOnes();
  } else if (name == "cls_token" || (name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0)) {
    // zeros
  } else {
    CounterRng rng(seed, fnv1a64(name));
    for (Index i = 0; i < t.size(); ++i) {
      double z = rng.normal();
      while (std::abs(z) > 2.0) z = rng.normal();
      t[i] = static_cast<float>(0.02 * z);
    }
  }
  return t;
}

}  // namespace

ParamStore<float> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore<float> params;
  for (const auto& [name, shape] : param_shapes(cfg)) params.insert(name, init_tensor(name, shape, seed));
  return params;
}

void reinit_head(ParamStore<float>& params, const ModelConfig& cfg, std::uint64_t seed) {
  for (const auto& [name, shape] : param_shapes(cfg)) {
    if (is_head_param(name)) params.at(name) = init_tensor(name, shape, seed);
  }
}

void check_params(const ParamStore<float>& params, const ModelConfig& cfg) {
  const auto shapes = param_shapes(cfg);
  if (params.size() != shapes.size()) {
    throw ConfigError("parameter store has " + std::to_string(params.size()) + " tensors, config expects " +
                      std::to_string(shapes.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (params[i].first != shapes[i].first || params[i].second.shape() != shapes[i].second) {
      throw ConfigError("parameter " + params[i].first + " " + to_string(params[i].second.shape()) +
                        " does not match expected " + shapes[i].first + " " + to_string(shapes[i].second));
    }
  }
}

}  // namespace vit3d
