#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vit3d/autodiff.hpp"
#include "vit3d/volume.hpp"

namespace vit3d {

/// Architecture hyperparameters of the cubic-patch vision transformer.
struct ModelConfig {
  int input_dim = 80;  // cubic volume side D
  int patch_size = 8;
  int hidden_dim = 256;
  int n_layers = 6;
  int n_heads = 8;
  double mlp_ratio = 4.0;
  double dropout_rate = 0.3;
  int n_classes = 2;

  // Throws ConfigError unless D % p == 0, h % H == 0, L >= 1 and all sizes positive.
  void validate() const;

  int grid() const { return input_dim / patch_size; }
  Index n_patches() const { return static_cast<Index>(grid()) * grid() * grid(); }
  Index patch_volume() const { return static_cast<Index>(patch_size) * patch_size * patch_size; }
  Index seq_len() const { return n_patches() + 1; }
  Index head_dim() const { return hidden_dim / n_heads; }
  Index mlp_hidden() const { return static_cast<Index>(std::llround(mlp_ratio * hidden_dim)); }

  bool operator==(const ModelConfig&) const = default;
};

// 3D ViT-B/16: p=16, h=768, 12 layers, 12 heads, dropout 0.1, on 80^3 input.
ModelConfig vit_b16_3d();
// NiT: p=8, h=256, 6 layers, dropout 0.3, on 80^3 input; 8 heads by default.
ModelConfig nit_default();

/// Canonical parameter names and shapes, in canonical order:
/// patch_embed.{weight,bias}, pos_embed, cls_token, then per block i
/// block{i}.{ln1,attn.qkv,attn.out,ln2,mlp.fc1,mlp.fc2}.{weight,bias},
/// then norm.{weight,bias} and head.{weight,bias}. Linear weights are [in, out].
std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& cfg);

/// Closed-form parameter count:
/// p^3 h + h + (N+1) h + h + L (3h^2 + 3h + h^2 + h + 4h + 2 m h + m + h) + 2h + h C + C,
/// where m = round(mlp_ratio * h) is the MLP width.
std::int64_t count_params(const ModelConfig& cfg);

// Depth used by layer-wise LR decay: 0 for embeddings, i+1 for block i,
// L+1 for the final norm and head. Throws ContractError on unknown names.
int param_depth(const std::string& name, const ModelConfig& cfg);
bool is_head_param(const std::string& name);
// LayerNorm gains/biases and every bias vector.
bool is_norm_or_bias(const std::string& name);

/// Truncated normal (std 0.02, cut at 2 std) for projections and embeddings,
/// zeros for biases and the class token, ones for LayerNorm gains. Each tensor
/// draws from its own stream keyed by (seed, name).
ParamStore<float> init_params(const ModelConfig& cfg, std::uint64_t seed);
void reinit_head(ParamStore<float>& params, const ModelConfig& cfg, std::uint64_t seed);

// Throws ConfigError naming the offending names/shapes if `params` does not
// match param_shapes(cfg) exactly.
void check_params(const ParamStore<float>& params, const ModelConfig& cfg);

struct ForwardOptions {
  bool train = false;
  DropoutStream* dropout = nullptr;
};

// Per-block attention probabilities [batch, heads, T, T], filled when requested.
template <typename S>
using AttentionMaps = std::vector<Tensor<S>>;

template <typename S>
class ModelVars {
 public:
  void add(const std::string& name, Var<S> v) { vars_[name] = v; }
  const Var<S>& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ContractError("missing model parameter " + name);
    return it->second;
  }

 private:
  std::unordered_map<std::string, Var<S>> vars_;
};

/// Registers every tensor of `params` on the tape, as a gradient-tracked
/// parameter when `trainable`, else as a constant.
template <typename S>
ModelVars<S> bind_params(Tape<S>& tape, const ParamStore<S>& params, bool trainable) {
  ModelVars<S> vars;
  for (const auto& [name, t] : params) vars.add(name, trainable ? tape.parameter(name, t) : tape.constant(t));
  return vars;
}

/// Cuts each D^3 volume into (D/p)^3 cubic patches: patches are ordered
/// x-fastest across the grid and voxels x-fastest within a patch.
/// Returns [batch, N, p^3].
template <typename S>
Tensor<S> extract_patches(std::span<const Volume> batch, const ModelConfig& cfg) {
  cfg.validate();
  if (batch.empty()) throw ContractError("extract_patches: empty batch");
  const int D = cfg.input_dim;
  const int p = cfg.patch_size;
  const int G = cfg.grid();
  const Index N = cfg.n_patches();
  const Index P = cfg.patch_volume();
  Tensor<S> out({static_cast<Index>(batch.size()), N, P});
  S* dst = out.data();
  for (const auto& v : batch) {
    if (v.dims != Dims3{D, D, D}) {
      throw ConfigError("volume dims (" + std::to_string(v.dims[0]) + "," + std::to_string(v.dims[1]) + "," +
                        std::to_string(v.dims[2]) + ") do not match model input_dim " + std::to_string(D));
    }
    for (int gz = 0; gz < G; ++gz) {
      for (int gy = 0; gy < G; ++gy) {
        for (int gx = 0; gx < G; ++gx) {
          for (int pz = 0; pz < p; ++pz) {
            for (int py = 0; py < p; ++py) {
              const float* src = v.data.data() + v.index(gx * p, gy * p + py, gz * p + pz);
              for (int px = 0; px < p; ++px) *dst++ = static_cast<S>(src[px]);
            }
          }
        }
      }
    }
  }
  return out;
}

/// patches [B, N, p^3] -> tokens [B, N+1, h]: linear projection, class token
/// prepended, position embedding added, dropout in train mode.
template <typename S>
Var<S> patch_embed(const Var<S>& patches, const ModelConfig& cfg, const ModelVars<S>& p, const ForwardOptions& opt) {
  if (patches.rank() != 3 || patches.dim(1) != cfg.n_patches() || patches.dim(2) != cfg.patch_volume()) {
    throw ContractError("patch_embed: expected patches [B," + std::to_string(cfg.n_patches()) + "," +
                        std::to_string(cfg.patch_volume()) + "], got " + to_string(patches.shape()));
  }
  const Index B = patches.dim(0);
  const Index h = cfg.hidden_dim;
  auto x = add(matmul(patches, p["patch_embed.weight"]), p["patch_embed.bias"]);
  auto cls = broadcast_leading(reshape(p["cls_token"], {1, h}), B);
  auto tokens = add(concat<S>({cls, x}, 1), p["pos_embed"]);
  return dropout(tokens, cfg.dropout_rate, opt.train, opt.dropout);
}

/// Multi-head self-attention on x [B, T, h] with fused qkv projection.
template <typename S>
Var<S> self_attention(const Var<S>& x, const ModelConfig& cfg, const ModelVars<S>& p, const std::string& prefix,
                      const ForwardOptions& opt, AttentionMaps<S>* maps) {
  const Index B = x.dim(0);
  const Index T = x.dim(1);
  const Index h = cfg.hidden_dim;
  const Index H = cfg.n_heads;
  const Index dh = cfg.head_dim();
  auto qkv = add(matmul(x, p[prefix + "attn.qkv.weight"]), p[prefix + "attn.qkv.bias"]);
  auto heads = permute(reshape(qkv, {B, T, 3, H, dh}), {2, 0, 3, 1, 4});  // [3, B, H, T, dh]
  auto q = reshape(slice(heads, 0, 0, 1), {B, H, T, dh});
  auto k = reshape(slice(heads, 0, 1, 1), {B, H, T, dh});
  auto v = reshape(slice(heads, 0, 2, 1), {B, H, T, dh});
  auto scores = scale(matmul(q, transpose(k)), static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
  auto attn = softmax(scores);
  if (maps) maps->push_back(attn.value());
  auto ctx = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {B, T, h});
  auto out = add(matmul(ctx, p[prefix + "attn.out.weight"]), p[prefix + "attn.out.bias"]);
  return dropout(out, cfg.dropout_rate, opt.train, opt.dropout);
}

template <typename S>
Var<S> mlp(const Var<S>& x, const ModelConfig& cfg, const ModelVars<S>& p, const std::string& prefix,
           const ForwardOptions& opt) {
  auto hidden = gelu(add(matmul(x, p[prefix + "mlp.fc1.weight"]), p[prefix + "mlp.fc1.bias"]));
  auto out = add(matmul(hidden, p[prefix + "mlp.fc2.weight"]), p[prefix + "mlp.fc2.bias"]);
  return dropout(out, cfg.dropout_rate, opt.train, opt.dropout);
}

/// L pre-norm blocks, z += MHA(LN(z)); z += MLP(LN(z)), then a final LN.
template <typename S>
Var<S> encoder_forward(const Var<S>& tokens, const ModelConfig& cfg, const ModelVars<S>& p, const ForwardOptions& opt,
                       AttentionMaps<S>* maps = nullptr) {
  if (tokens.rank() != 3 || tokens.dim(2) != cfg.hidden_dim) {
    throw ContractError("encoder_forward: expected tokens [B,T," + std::to_string(cfg.hidden_dim) + "], got " +
                        to_string(tokens.shape()));
  }
  Var<S> z = tokens;
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string b = "block" + std::to_string(i) + ".";
    z = add(z, self_attention(layer_norm(z, p[b + "ln1.weight"], p[b + "ln1.bias"]), cfg, p, b, opt, maps));
    z = add(z, mlp(layer_norm(z, p[b + "ln2.weight"], p[b + "ln2.bias"]), cfg, p, b, opt));
  }
  return layer_norm(z, p["norm.weight"], p["norm.bias"]);
}

/// Logits [B, n_classes] from the encoded class-token row.
template <typename S>
Var<S> classify(const Var<S>& patches, const ModelConfig& cfg, const ModelVars<S>& p, const ForwardOptions& opt) {
  auto encoded = encoder_forward(patch_embed(patches, cfg, p, opt), cfg, p, opt);
  const Index B = encoded.dim(0);
  auto cls = reshape(slice(encoded, 1, 0, 1), {B, static_cast<Index>(cfg.hidden_dim)});
  return add(matmul(cls, p["head.weight"]), p["head.bias"]);
}

/// Eval-mode logits for a batch of volumes, without gradient tracking.
template <typename S>
Tensor<S> predict_logits(const ParamStore<S>& params, std::span<const Volume> batch, const ModelConfig& cfg) {
  Tape<S> tape;
  auto vars = bind_params(tape, params, false);
  auto patches = tape.constant(extract_patches<S>(batch, cfg));
  return classify(patches, cfg, vars, ForwardOptions{}).value();
}

}  // namespace vit3d
