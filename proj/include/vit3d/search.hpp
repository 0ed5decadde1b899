#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

namespace vit3d {

struct SearchSpace {
  double lr_min = 1e-5, lr_max = 1e-3;
  double wd_min = 1e-5, wd_max = 1e-3;
  std::vector<int> warmup_choices{1, 5, 10, 15};
  std::vector<int> heads_choices{2, 4, 8, 12};
  std::vector<int> layers_choices{3, 4, 6};
  int n_trials = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Trial {
  int index = 0;
  double lr = 0.0;
  double weight_decay = 0.0;
  int warmup_epochs = 1;
  int n_heads = 2;
  int n_layers = 3;
};

struct TrialResult {
  Trial trial;
  bool ok = false;
  double val_auc = 0.0;
  std::string error;
};

// i.i.d. draws: uniform reals on the ranges, uniform choice on the sets.
std::vector<Trial> sample_trials(const SearchSpace& space);

using TrialObjective = std::function<double(const Trial&)>;

/// Runs every trial and ranks by validation AUC, descending; ties keep trial
/// order and failed trials (objective threw) rank last with their message.
std::vector<TrialResult> random_search(const SearchSpace& space, const TrialObjective& objective);

nlohmann::json trial_to_json(const TrialResult& r);
std::string search_csv(const std::vector<TrialResult>& ranked);

}  // namespace vit3d
