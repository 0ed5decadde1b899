#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vit3d/dataset.hpp"
#include "vit3d/forest.hpp"
#include "vit3d/glcm.hpp"
#include "vit3d/metrics.hpp"
#include "vit3d/train.hpp"
#include "vit3d/vit.hpp"

namespace vit3d {

/// Keeps the first ceil(fraction * n) train subjects of a seeded permutation of
/// the sorted train subjects, so for one seed smaller fractions are always
/// prefixes of larger ones. Val and test entries pass through.
DatasetManifest subsample_nested(const DatasetManifest& manifest, double fraction, std::uint64_t seed);
std::vector<std::string> nested_subjects(std::vector<std::string> subjects, double fraction, std::uint64_t seed);
LabeledSet subsample_nested(const LabeledSet& set, double fraction, std::uint64_t seed);

inline constexpr const char* kTransformer = "transformer";
inline constexpr const char* kForest = "forest";

struct TrainOverride {
  std::optional<int> epochs;
  std::optional<int> warmup_epochs;
  std::optional<double> lr;
};

struct ScalingSpec {
  std::vector<double> fractions{0.10, 0.25, 0.50, 0.75, 1.00};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  LabeledSet train_pool;
  LabeledSet val_set;
  std::map<std::string, LabeledSet> eval_sets;  // e.g. "test", "zeroshot"
  ModelConfig model;
  TrainConfig train;
  std::map<double, TrainOverride> overrides;  // keyed by fraction
  bool transformer = true;
  bool baseline = true;
  ForestConfig forest;
  GlcmConfig glcm;
  std::filesystem::path store_dir;  // empty: no persistence

  void validate() const;
};

struct CellRecord {
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::string model;
  std::string key;  // content hash of the cell spec
  bool ok = false;
  bool reused = false;  // loaded from the store instead of recomputed
  std::string error;
  std::map<std::string, MetricsReport> reports;  // per eval set
  nlohmann::json provenance;
};

struct ScalingResult {
  std::vector<CellRecord> cells;

  std::vector<std::string> models() const;
  std::vector<std::string> eval_sets() const;
  std::vector<double> fractions() const;
};

struct Aggregate {
  double mean = 0.0, min = 0.0, max = 0.0;
  int n = 0;
};

// Over seeds of successful cells; n == 0 when there are none.
Aggregate aggregate(const ScalingResult& r, const std::string& model, const std::string& eval_set, double fraction,
                    int metric_index = 0);

using CellLogger = std::function<void(const CellRecord&)>;

/// Runs every (fraction, seed, model) cell. With a store directory, each
/// finished cell is written atomically to <store>/<key>.json and later runs
/// reuse it; a record that fails to parse or whose content does not match its
/// key raises IntegrityError. Failed cells are reported, not stored.
ScalingResult run_scaling(const ScalingSpec& spec, const CellLogger& log = {});

std::string cell_key(const ScalingSpec& spec, double fraction, std::uint64_t seed, const std::string& model);

/// Writes scaling_<model>_<eval>.csv (rows in kMetricNames order, one
/// column per fraction, seed means), scaling_auc_<eval>.csv (mean/min/max per
/// model and fraction) and scaling_<eval>.svg (one series per model with a
/// min-max band). Returns the written paths.
std::vector<std::filesystem::path> emit_outputs(const ScalingResult& result, const std::filesystem::path& out_dir);
std::string metrics_table_csv(const ScalingResult& result, const std::string& model, const std::string& eval_set);
std::string scaling_svg(const ScalingResult& result, const std::string& eval_set);

}  // namespace vit3d
