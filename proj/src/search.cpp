#include "vit3d/search.hpp"

#include <algorithm>
#include <cstdio>

#include "vit3d/error.hpp"
#include "vit3d/rng.hpp"

namespace vit3d {

void SearchSpace::validate() const {
  if (!(lr_min > 0.0 && lr_min <= lr_max)) throw ConfigError("search lr range must satisfy 0 < min <= max");
  if (!(wd_min >= 0.0 && wd_min <= wd_max)) throw ConfigError("search wd range must satisfy 0 <= min <= max");
  if (warmup_choices.empty() || heads_choices.empty() || layers_choices.empty()) {
    throw ConfigError("search choice sets must be non-empty");
  }
  if (n_trials < 1) throw ConfigError("n_trials must be >= 1");
}

std::vector<Trial> sample_trials(const SearchSpace& space) {
  space.validate();
  std::vector<Trial> trials;
  for (int i = 0; i < space.n_trials; ++i) {
    CounterRng rng(space.seed, fnv1a64("search") + static_cast<std::uint64_t>(i));
    auto pick = [&](const std::vector<int>& set) { return set[static_cast<std::size_t>(rng.below(set.size()))]; };
    Trial t;
    t.index = i;
    t.lr = rng.uniform(space.lr_min, space.lr_max);
    t.weight_decay = rng.uniform(space.wd_min, space.wd_max);
    t.warmup_epochs = pick(space.warmup_choices);
    t.n_heads = pick(space.heads_choices);
    t.n_layers = pick(space.layers_choices);
    trials.push_back(t);
  }
  return trials;
}

std::vector<TrialResult> random_search(const SearchSpace& space, const TrialObjective& objective) {
  std::vector<TrialResult> results;
  for (const auto& t : sample_trials(space)) {
    TrialResult r{t, false, 0.0, {}};
    try {
      r.val_auc = objective(t);
      r.ok = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    results.push_back(std::move(r));
  }
  std::stable_sort(results.begin(), results.end(), [](const TrialResult& a, const TrialResult& b) {
    if (a.ok != b.ok) return a.ok;
    return a.ok && a.val_auc > b.val_auc;
  });
  return results;
}

nlohmann::json trial_to_json(const TrialResult& r) {
  nlohmann::json j{{"index", r.trial.index},
                   {"lr", r.trial.lr},
                   {"wd", r.trial.weight_decay},
                   {"warmup_epochs", r.trial.warmup_epochs},
                   {"n_heads", r.trial.n_heads},
                   {"n_layers", r.trial.n_layers},
                   {"ok", r.ok}};
  if (r.ok) j["val_auc"] = r.val_auc;
  else j["error"] = r.error;
  return j;
}

std::string search_csv(const std::vector<TrialResult>& ranked) {
  std::string out = "rank,trial,lr,wd,warmup_epochs,n_heads,n_layers,val_auc,status\n";
  char buf[256];
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    std::snprintf(buf, sizeof(buf), "%zu,%d,%.17g,%.17g,%d,%d,%d,", i + 1, r.trial.index, r.trial.lr,
                  r.trial.weight_decay, r.trial.warmup_epochs, r.trial.n_heads, r.trial.n_layers);
    out += buf;
    if (r.ok) {
      std::snprintf(buf, sizeof(buf), "%.17g,ok\n", r.val_auc);
      out += buf;
    } else {
      out += ",failed\n";
    }
  }
  return out;
}

}  // namespace vit3d
