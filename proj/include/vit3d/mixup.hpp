#pragma once

#include <span>
#include <vector>

#include "vit3d/autodiff.hpp"
#include "vit3d/rng.hpp"
#include "vit3d/volume.hpp"

namespace vit3d {

struct MixupConfig {
  double alpha = 0.2;  // lambda ~ Beta(alpha, alpha)
  double batch_probability = 0.5;

  void validate() const;
};

struct MixedBatch {
  std::vector<Volume> volumes;
  std::vector<int> labels_a;
  std::vector<int> labels_b;
  double lambda = 1.0;
};

double sample_lambda(const MixupConfig& cfg, CounterRng& rng);

// lambda * a + (1 - lambda) * b, voxelwise.
Volume mix_volumes(const Volume& a, const Volume& b, double lambda);

/// Samples lambda once and pairs sample i with sample perm[i] of a random
/// permutation. A batch of one is returned unchanged with lambda = 1.
MixedBatch mixup_batch(std::span<const Volume> x, std::span<const int> y, const MixupConfig& cfg, CounterRng& rng);
// Same pairing rule with a caller-chosen lambda.
MixedBatch mixup_batch_with(std::span<const Volume> x, std::span<const int> y, double lambda, CounterRng& rng);

// lambda * CE(logits, labels_a) + (1 - lambda) * CE(logits, labels_b).
template <typename S>
Var<S> mixup_loss(const Var<S>& logits, std::span<const int> labels_a, std::span<const int> labels_b, double lambda) {
  if (lambda == 1.0) return cross_entropy_from_logits(logits, labels_a);
  if (lambda == 0.0) return cross_entropy_from_logits(logits, labels_b);
  return add(scale(cross_entropy_from_logits(logits, labels_a), static_cast<S>(lambda)),
             scale(cross_entropy_from_logits(logits, labels_b), static_cast<S>(1.0 - lambda)));
}

}  // namespace vit3d
