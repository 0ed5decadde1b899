#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "vit3d/dataset.hpp"
#include "vit3d/volume.hpp"

namespace vit3d {

using Offset3 = std::array<int, 3>;

// The 13 unique unit offsets of the 26-neighbourhood (one of each +/- pair).
const std::array<Offset3, 13>& glcm_directions();

struct GlcmConfig {
  int n_levels = 32;
  int distance = 1;
  bool symmetric = true;

  void validate() const;
};

// Equal-width bins over [min, max] of the volume; a constant volume maps to level 0.
std::vector<int> quantize(const Volume& v, int n_levels);

// Normalized co-occurrence matrix for one offset (scaled by distance). All zero
// when no voxel pair fits inside the volume.
Eigen::MatrixXd glcm_matrix(const Volume& v, const GlcmConfig& cfg, const Offset3& direction);
// Mean of the normalized matrices over the directions that have pairs.
Eigen::MatrixXd glcm_average(const Volume& v, const GlcmConfig& cfg);

inline constexpr std::array<std::string_view, 6> kGlcmFeatureNames{
    "contrast", "dissimilarity", "homogeneity", "energy", "entropy", "correlation"};

/// From a joint probability matrix p(i,j):
/// contrast sum (i-j)^2 p, dissimilarity sum |i-j| p, homogeneity sum p / (1 + (i-j)^2),
/// energy sum p^2, entropy -sum p ln p, correlation sum (i-mu_i)(j-mu_j) p / (s_i s_j)
/// (0 when either marginal variance is 0). A matrix without mass is treated as
/// a single-level matrix.
std::array<double, 6> haralick_features(const Eigen::MatrixXd& p);
std::array<double, 6> glcm_features(const Volume& v, const GlcmConfig& cfg = {});

struct FeatureTable {
  std::vector<std::string> subjects;
  std::vector<int> labels;
  Eigen::MatrixXd features;  // one row per scan, columns kGlcmFeatureNames
};

FeatureTable extract_features(const LabeledSet& set, const GlcmConfig& cfg = {});
// Header `subject_id,label,<feature names>`.
std::string feature_csv(const FeatureTable& table);
FeatureTable parse_feature_csv(std::string_view text);

}  // namespace vit3d
