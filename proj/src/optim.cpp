#include "vit3d/optim.hpp"

#include <cmath>

#include "vit3d/error.hpp"
#include "vit3d/vit.hpp"

namespace vit3d {

void OptimizerConfig::validate() const {
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
}

void adam_step(ParamStore<float>& params, const NamedTensors<float>& grads, AdamState& state,
               const OptimizerConfig& opt, double lr, const std::vector<double>* lr_multipliers) {
  if (grads.size() != params.size()) throw ContractError("adam_step: gradient count differs from parameter count");
  if (lr_multipliers && lr_multipliers->size() != params.size()) {
    throw ContractError("adam_step: lr multiplier count differs from parameter count");
  }
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.insert(name, Tensor<float>::zeros(t.shape()));
      state.v.insert(name, Tensor<float>::zeros(t.shape()));
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state does not match parameters");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const auto b1 = static_cast<float>(opt.beta1);
  const auto b2 = static_cast<float>(opt.beta2);
  const auto c1 = static_cast<float>(1.0 / (1.0 - std::pow(opt.beta1, t)));
  const auto c2 = static_cast<float>(1.0 / (1.0 - std::pow(opt.beta2, t)));
  const auto eps = static_cast<float>(opt.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, theta] = params[i];
    const auto& g = grads[i].second;
    auto& m = state.m[i].second;
    auto& v = state.v[i].second;
    if (grads[i].first != name || g.shape() != theta.shape() || m.shape() != theta.shape()) {
      throw ContractError("adam_step: shape or name mismatch for " + name);
    }
    const double rate = lr * (lr_multipliers ? (*lr_multipliers)[i] : 1.0);
    const bool decayed = opt.weight_decay > 0.0 && !is_norm_or_bias(name);
    Eigen::ArrayXf grad = g.array();
    if (decayed && opt.decay_mode == WeightDecayMode::L2) {
      grad += static_cast<float>(opt.weight_decay) * theta.array();
    }
    if (decayed && opt.decay_mode == WeightDecayMode::Decoupled) {
      theta.array() *= static_cast<float>(1.0 - rate * opt.weight_decay);
    }
    m.array() = b1 * m.array() + (1.0f - b1) * grad;
    v.array() = b2 * v.array() + (1.0f - b2) * grad.square();
    theta.array() -= static_cast<float>(rate) * (m.array() * c1) / ((v.array() * c2).sqrt() + eps);
  }
}

}  // namespace vit3d
