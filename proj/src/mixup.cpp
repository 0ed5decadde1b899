#include "vit3d/mixup.hpp"

#include "vit3d/error.hpp"

namespace vit3d {

void MixupConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("mixup.alpha must be > 0");
  if (!(batch_probability >= 0.0 && batch_probability <= 1.0)) throw ConfigError("mixup.prob must be in [0, 1]");
}

double sample_lambda(const MixupConfig& cfg, CounterRng& rng) {
  cfg.validate();
  return rng.beta(cfg.alpha, cfg.alpha);
}

Volume mix_volumes(const Volume& a, const Volume& b, double lambda) {
  if (a.dims != b.dims) throw ContractError("mixup: volumes differ in dims");
  if (lambda == 1.0) return a;
  if (lambda == 0.0) return b;
  Volume out = a;
  const auto l = static_cast<float>(lambda);
  const auto r = static_cast<float>(1.0 - lambda);
  out.data = l * a.data + r * b.data;
  // Rounding can leave the result one ulp outside [min(a,b), max(a,b)].
  out.data = out.data.max(a.data.min(b.data)).min(a.data.max(b.data));
  return out;
}

MixedBatch mixup_batch_with(std::span<const Volume> x, std::span<const int> y, double lambda, CounterRng& rng) {
  if (x.size() != y.size()) throw ContractError("mixup: volume and label counts differ");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ContractError("mixup: lambda outside [0, 1]");
  MixedBatch out;
  out.labels_a.assign(y.begin(), y.end());
  if (x.size() < 2) {
    out.volumes.assign(x.begin(), x.end());
    out.labels_b = out.labels_a;
    out.lambda = 1.0;
    return out;
  }
  const auto perm = random_permutation(x.size(), rng);
  out.lambda = lambda;
  out.volumes.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.volumes.push_back(mix_volumes(x[i], x[perm[i]], lambda));
    out.labels_b.push_back(y[perm[i]]);
  }
  return out;
}

MixedBatch mixup_batch(std::span<const Volume> x, std::span<const int> y, const MixupConfig& cfg, CounterRng& rng) {
  if (x.size() < 2) return mixup_batch_with(x, y, 1.0, rng);
  const double lambda = sample_lambda(cfg, rng);
  return mixup_batch_with(x, y, lambda, rng);
}

}  // namespace vit3d
