#include "vit3d/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vit3d/binary_io.hpp"
#include "vit3d/error.hpp"
#include "vit3d/rng.hpp"

namespace vit3d {

namespace {

constexpr std::string_view kMagic = "RFOR";
constexpr std::uint32_t kVersion = 1;

double gini(double n0, double n1) {
  const double n = n0 + n1;
  if (n == 0.0) return 0.0;
  const double p0 = n0 / n, p1 = n1 / n;
  return 1.0 - p0 * p0 - p1 * p1;
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;  // weighted child impurity
};

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& x, std::span<const int> y, const ForestConfig& cfg, int mtry, CounterRng rng)
      : x_(x), y_(y), cfg_(cfg), mtry_(mtry), rng_(rng) {}

  Tree build(std::vector<std::size_t> samples) {
    Tree tree;
    tree.nodes.emplace_back();
    grow(tree, 0, std::move(samples), 0);
    return tree;
  }

 private:
  void grow(Tree& tree, std::size_t node, std::vector<std::size_t> samples, int depth) {
    std::uint32_t n1 = 0;
    for (auto s : samples) n1 += y_[s] == 1;
    const auto n0 = static_cast<std::uint32_t>(samples.size()) - n1;
    tree.nodes[node].n0 = n0;
    tree.nodes[node].n1 = n1;
    const auto leaf = static_cast<std::size_t>(cfg_.min_samples_leaf);
    if (n0 == 0 || n1 == 0) return;
    if (cfg_.max_depth >= 0 && depth >= cfg_.max_depth) return;
    if (samples.size() < 2 * leaf) return;

    const Split split = find_split(samples, n0, n1);
    if (split.feature < 0) return;

    std::vector<std::size_t> left, right;
    for (auto s : samples) (x_(static_cast<Eigen::Index>(s), split.feature) <= split.threshold ? left : right).push_back(s);
    tree.nodes[node].feature = split.feature;
    tree.nodes[node].threshold = split.threshold;
    const auto l = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    const auto r = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.nodes[node].left = l;
    tree.nodes[node].right = r;
    grow(tree, static_cast<std::size_t>(l), std::move(left), depth + 1);
    grow(tree, static_cast<std::size_t>(r), std::move(right), depth + 1);
  }

  Split find_split(const std::vector<std::size_t>& samples, std::uint32_t n0, std::uint32_t n1) {
    const int n_features = static_cast<int>(x_.cols());
    std::vector<int> order(static_cast<std::size_t>(n_features));
    std::iota(order.begin(), order.end(), 0);
    shuffle(std::span<int>(order), rng_);
    const double parent = gini(n0, n1) * static_cast<double>(samples.size());
    Split best;
    best.score = parent;
    for (int k = 0; k < n_features; ++k) {
      try_feature(order[static_cast<std::size_t>(k)], samples, n0, n1, best);
      // Stop after mtry features unless nothing usable has turned up yet.
      if (k + 1 >= mtry_ && best.feature >= 0) break;
    }
    return best;
  }

  void try_feature(int f, const std::vector<std::size_t>& samples, std::uint32_t n0, std::uint32_t n1, Split& best) {
    std::vector<std::pair<double, int>> v;
    v.reserve(samples.size());
    for (auto s : samples) v.emplace_back(x_(static_cast<Eigen::Index>(s), f), y_[s]);
    std::sort(v.begin(), v.end());
    const auto leaf = static_cast<std::size_t>(cfg_.min_samples_leaf);
    double l0 = 0, l1 = 0;
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
      (v[i].second == 1 ? l1 : l0) += 1;
      if (v[i].first == v[i + 1].first) continue;
      const std::size_t nl = i + 1, nr = v.size() - nl;
      if (nl < leaf || nr < leaf) continue;
      const double r0 = n0 - l0, r1 = n1 - l1;
      const double score = gini(l0, l1) * static_cast<double>(nl) + gini(r0, r1) * static_cast<double>(nr);
      if (score < best.score - 1e-12 || best.feature < 0) {
        double t = 0.5 * (v[i].first + v[i + 1].first);
        if (!(t < v[i + 1].first)) t = v[i].first;
        best = {f, t, score};
      }
    }
  }

  const Eigen::MatrixXd& x_;
  std::span<const int> y_;
  const ForestConfig& cfg_;
  int mtry_;
  CounterRng rng_;
};

}  // namespace

void ForestConfig::validate() const {
  if (n_trees < 1) throw ConfigError("n_trees must be >= 1");
  if (max_depth < -1) throw ConfigError("max_depth must be -1 (unlimited) or >= 0");
  if (features_per_split < 0) throw ConfigError("features_per_split must be >= 0");
  if (min_samples_leaf < 1) throw ConfigError("min_samples_leaf must be >= 1");
}

bool Tree::predict(const double* x) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    i = static_cast<std::size_t>(x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right);
  }
  return nodes[i].vote();
}

bool Forest::operator==(const Forest& other) const { return encode_forest(*this) == encode_forest(other); }

Forest forest_fit(const Eigen::MatrixXd& features, std::span<const int> labels, const ForestConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(features.rows());
  if (labels.size() != n) throw ContractError("forest_fit: feature rows and labels differ in length");
  if (n < 2) throw ContractError("forest_fit: needs at least 2 samples");
  if (features.cols() < 1) throw ContractError("forest_fit: needs at least one feature");
  if (!features.allFinite()) throw ContractError("forest_fit: features must be finite");
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw ContractError("forest_fit: labels must be 0 or 1");
    pos += l == 1;
  }
  if (pos == 0 || pos == n) throw ContractError("forest_fit: both classes must be present");

  const int n_features = static_cast<int>(features.cols());
  const int mtry = cfg.features_per_split > 0
                       ? std::min(cfg.features_per_split, n_features)
                       : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_features)))));
  Forest forest;
  forest.n_features = n_features;
  for (int t = 0; t < cfg.n_trees; ++t) {
    CounterRng rng(cfg.seed, static_cast<std::uint64_t>(t));
    std::vector<std::size_t> samples(n);
    if (cfg.bootstrap) {
      for (auto& s : samples) s = static_cast<std::size_t>(rng.below(n));
    } else {
      std::iota(samples.begin(), samples.end(), std::size_t{0});
    }
    TreeBuilder builder(features, labels, cfg, mtry, rng.split(1));
    forest.trees.push_back(builder.build(std::move(samples)));
  }
  return forest;
}

std::vector<double> forest_predict(const Forest& forest, const Eigen::MatrixXd& features) {
  if (features.cols() != forest.n_features) {
    throw ContractError("forest_predict: forest expects " + std::to_string(forest.n_features) + " features, got " +
                        std::to_string(features.cols()));
  }
  if (forest.trees.empty()) throw ContractError("forest_predict: empty forest");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = features;
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    std::size_t votes = 0;
    for (const auto& tree : forest.trees) votes += tree.predict(rows.row(r).data());
    scores.push_back(static_cast<double>(votes) / static_cast<double>(forest.trees.size()));
  }
  return scores;
}

std::vector<unsigned char> encode_forest(const Forest& forest) {
  io::Writer w;
  w.put_bytes(kMagic);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(forest.n_features));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(forest.trees.size()));
  for (const auto& tree : forest.trees) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tree.nodes.size()));
    for (const auto& n : tree.nodes) {
      w.put<std::int32_t>(n.feature);
      w.put<double>(n.threshold);
      w.put<std::int32_t>(n.left);
      w.put<std::int32_t>(n.right);
      w.put<std::uint32_t>(n.n0);
      w.put<std::uint32_t>(n.n1);
    }
  }
  return w.bytes();
}

Forest decode_forest(const std::vector<unsigned char>& bytes, const std::string& what) {
  io::Reader r(bytes.data(), bytes.size(), what);
  if (r.get_bytes(4) != kMagic) throw FormatError(what + ": bad magic, not a forest file");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw UnsupportedFormatError(what + ": unsupported forest version " + std::to_string(version));
  Forest f;
  f.n_features = static_cast<int>(r.get<std::uint32_t>());
  const auto n_trees = r.get<std::uint32_t>();
  for (std::uint32_t t = 0; t < n_trees; ++t) {
    Tree tree;
    const auto n_nodes = r.get<std::uint32_t>();
    if (n_nodes == 0) throw FormatError(what + ": tree without nodes");
    for (std::uint32_t i = 0; i < n_nodes; ++i) {
      TreeNode n;
      n.feature = r.get<std::int32_t>();
      n.threshold = r.get<double>();
      n.left = r.get<std::int32_t>();
      n.right = r.get<std::int32_t>();
      n.n0 = r.get<std::uint32_t>();
      n.n1 = r.get<std::uint32_t>();
      if (n.feature >= f.n_features ||
          (n.feature >= 0 && (n.left <= static_cast<std::int32_t>(i) || n.right <= static_cast<std::int32_t>(i) ||
                              n.left >= static_cast<std::int32_t>(n_nodes) || n.right >= static_cast<std::int32_t>(n_nodes)))) {
        throw FormatError(what + ": invalid node " + std::to_string(i) + " in tree " + std::to_string(t));
      }
      tree.nodes.push_back(n);
    }
    f.trees.push_back(std::move(tree));
  }
  if (r.remaining() != 0) throw FormatError(what + ": trailing bytes after forest");
  return f;
}

void save_forest(const std::filesystem::path& path, const Forest& forest) {
  const auto bytes = encode_forest(forest);
  io::write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Forest load_forest(const std::filesystem::path& path) { return decode_forest(io::read_file(path), path.string()); }

}  // namespace vit3d
