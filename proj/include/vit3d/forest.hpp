#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace vit3d {

struct ForestConfig {
  int n_trees = 100;
  int max_depth = -1;           // -1: unlimited
  int features_per_split = 0;   // 0: floor(sqrt(n_features)), at least 1
  int min_samples_leaf = 1;
  bool bootstrap = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 for leaves
  double threshold = 0.0;     // go left iff x[feature] <= threshold
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::uint32_t n0 = 0;  // training samples per class reaching the node
  std::uint32_t n1 = 0;
  bool vote() const { return n1 > n0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  bool predict(const double* x) const;
};

struct Forest {
  int n_features = 0;
  std::vector<Tree> trees;

  bool operator==(const Forest& other) const;
};

/// Each tree is a CART on a bootstrap sample (or the full set), splitting on
/// the Gini-best midpoint threshold among a random feature subset per node.
/// When none of the drawn features can split, the remaining ones are tried.
/// Tree t draws from CounterRng(seed, t). ContractError on a single class.
Forest forest_fit(const Eigen::MatrixXd& features, std::span<const int> labels, const ForestConfig& cfg);

// Fraction of trees voting positive, per row.
std::vector<double> forest_predict(const Forest& forest, const Eigen::MatrixXd& features);

/// "RFOR", u32 version (1), u32 n_features, u32 n_trees, then per tree u32
/// node count and per node: i32 feature, f64 threshold, i32 left, i32 right,
/// u32 n0, u32 n1. Little-endian.
std::vector<unsigned char> encode_forest(const Forest& forest);
Forest decode_forest(const std::vector<unsigned char>& bytes, const std::string& what = "forest");
void save_forest(const std::filesystem::path& path, const Forest& forest);
Forest load_forest(const std::filesystem::path& path);

}  // namespace vit3d
