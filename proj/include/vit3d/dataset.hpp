#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "vit3d/volume.hpp"

namespace vit3d {

enum class Split { Train, Val, Test };

std::string_view to_string(Split s);
Split parse_split(std::string_view name);

struct ManifestEntry {
  std::string subject_id;
  std::string path;
  int label = 0;
  Split split = Split::Train;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  // Every subject in exactly one split, labels in {0,1}, paths non-empty.
  void validate() const;
  DatasetManifest filter(Split split) const;
  std::vector<std::string> subjects() const;  // sorted, unique

  bool operator==(const DatasetManifest&) const = default;
};

// UTF-8 CSV with header `subject_id,path,label,split`.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
std::string manifest_csv(const DatasetManifest& manifest);
DatasetManifest parse_manifest_csv(std::string_view text);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Assigns splits per subject. Subjects are sorted, permuted by `seed`, and
/// cut into consecutive runs whose sizes come from largest-remainder rounding
/// of the fractions (remainder ties go to the earlier split). Every split gets
/// at least one subject.
DatasetManifest split_by_subject(const std::vector<ManifestEntry>& entries, SplitFractions fractions,
                                 std::uint64_t seed);

struct SynthSpec {
  int n_per_class = 100;
  Dims3 dims{32, 32, 32};
  double effect_size = 2.0;  // in units of noise_sigma
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Voxel mask of the centered ellipsoid with semi-axes dims / 4.
std::vector<bool> ellipsoid_mask(Dims3 dims);

/// Class 0: iid N(0, sigma^2) voxels. Class 1: the same, minus
/// effect_size * sigma inside the centered ellipsoid. Volumes alternate
/// label 0, 1, 0, 1, ...; each is its own subject `synth_NNNNN`; manifest
/// paths are `synth_NNNNN.vol` and every split is Train.
std::pair<std::vector<Volume>, DatasetManifest> generate_synthetic(const SynthSpec& spec);

/// In-memory labelled volumes, the unit training and evaluation consume.
struct LabeledSet {
  std::vector<Volume> volumes;
  std::vector<int> labels;
  std::vector<std::string> subjects;

  std::size_t size() const { return volumes.size(); }
  bool empty() const { return volumes.empty(); }
  void push_back(Volume v, int label, std::string subject);
  LabeledSet subset(const std::vector<std::size_t>& indices) const;
};

// Loads the entries of `split`; relative paths resolve against `base_dir`.
LabeledSet load_split(const DatasetManifest& manifest, Split split, const std::filesystem::path& base_dir);
LabeledSet load_all(const DatasetManifest& manifest, const std::filesystem::path& base_dir);

// Pairs generated volumes with the matching manifest entries for `split`.
LabeledSet select_split(const std::vector<Volume>& volumes, const DatasetManifest& manifest, Split split);

}  // namespace vit3d
