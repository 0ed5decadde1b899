#include "vit3d/glcm.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "vit3d/error.hpp"

namespace vit3d {

const std::array<Offset3, 13>& glcm_directions() {
  static const std::array<Offset3, 13> dirs{{{1, 0, 0},
                                             {0, 1, 0},
                                             {0, 0, 1},
                                             {1, 1, 0},
                                             {1, -1, 0},
                                             {1, 0, 1},
                                             {1, 0, -1},
                                             {0, 1, 1},
                                             {0, 1, -1},
                                             {1, 1, 1},
                                             {1, 1, -1},
                                             {1, -1, 1},
                                             {1, -1, -1}}};
  return dirs;
}

void GlcmConfig::validate() const {
  if (n_levels < 2) throw ConfigError("GLCM n_levels must be >= 2");
  if (distance < 1) throw ConfigError("GLCM distance must be >= 1");
}

std::vector<int> quantize(const Volume& v, int n_levels) {
  const double lo = v.data.minCoeff();
  const double hi = v.data.maxCoeff();
  std::vector<int> q(static_cast<std::size_t>(v.data.size()), 0);
  if (!(hi > lo)) return q;
  const double width = hi - lo;
  for (Eigen::Index i = 0; i < v.data.size(); ++i) {
    const int level = static_cast<int>(std::floor((static_cast<double>(v.data[i]) - lo) / width * n_levels));
    q[static_cast<std::size_t>(i)] = std::clamp(level, 0, n_levels - 1);
  }
  return q;
}

namespace {

Eigen::MatrixXd counts_for(const std::vector<int>& q, const Dims3& dims, const GlcmConfig& cfg, const Offset3& dir) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(cfg.n_levels, cfg.n_levels);
  const int ox = dir[0] * cfg.distance, oy = dir[1] * cfg.distance, oz = dir[2] * cfg.distance;
  auto at = [&](int x, int y, int z) {
    return q[static_cast<std::size_t>(x) + static_cast<std::size_t>(dims[0]) * (y + static_cast<std::size_t>(dims[1]) * z)];
  };
  for (int z = std::max(0, -oz); z < std::min(dims[2], dims[2] - oz); ++z) {
    for (int y = std::max(0, -oy); y < std::min(dims[1], dims[1] - oy); ++y) {
      for (int x = std::max(0, -ox); x < std::min(dims[0], dims[0] - ox); ++x) {
        const int a = at(x, y, z);
        const int b = at(x + ox, y + oy, z + oz);
        m(a, b) += 1.0;
        if (cfg.symmetric) m(b, a) += 1.0;
      }
    }
  }
  return m;
}

}  // namespace

Eigen::MatrixXd glcm_matrix(const Volume& v, const GlcmConfig& cfg, const Offset3& direction) {
  cfg.validate();
  auto m = counts_for(quantize(v, cfg.n_levels), v.dims, cfg, direction);
  const double total = m.sum();
  if (total > 0.0) m /= total;
  return m;
}

Eigen::MatrixXd glcm_average(const Volume& v, const GlcmConfig& cfg) {
  cfg.validate();
  const auto q = quantize(v, cfg.n_levels);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(cfg.n_levels, cfg.n_levels);
  int used = 0;
  for (const auto& dir : glcm_directions()) {
    auto m = counts_for(q, v.dims, cfg, dir);
    const double total = m.sum();
    if (total == 0.0) continue;
    acc += m / total;
    ++used;
  }
  if (used > 0) acc /= used;
  return acc;
}

std::array<double, 6> haralick_features(const Eigen::MatrixXd& input) {
  Eigen::MatrixXd p = input;
  if (!(p.sum() > 0.0)) {
    p = Eigen::MatrixXd::Zero(std::max<Eigen::Index>(1, input.rows()), std::max<Eigen::Index>(1, input.cols()));
    p(0, 0) = 1.0;
  }
  double contrast = 0, dissimilarity = 0, homogeneity = 0, energy = 0, entropy = 0;
  double mu_i = 0, mu_j = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double x = p(i, j);
      const double d = static_cast<double>(i - j);
      contrast += d * d * x;
      dissimilarity += std::abs(d) * x;
      homogeneity += x / (1.0 + d * d);
      energy += x * x;
      if (x > 0.0) entropy -= x * std::log(x);
      mu_i += static_cast<double>(i) * x;
      mu_j += static_cast<double>(j) * x;
    }
  }
  double var_i = 0, var_j = 0, cov = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double x = p(i, j);
      var_i += (i - mu_i) * (i - mu_i) * x;
      var_j += (j - mu_j) * (j - mu_j) * x;
      cov += (i - mu_i) * (j - mu_j) * x;
    }
  }
  const double correlation = (var_i > 0.0 && var_j > 0.0) ? cov / std::sqrt(var_i * var_j) : 0.0;
  return {contrast, dissimilarity, homogeneity, energy, entropy, correlation};
}

std::array<double, 6> glcm_features(const Volume& v, const GlcmConfig& cfg) {
  return haralick_features(glcm_average(v, cfg));
}

FeatureTable extract_features(const LabeledSet& set, const GlcmConfig& cfg) {
  FeatureTable t;
  t.subjects = set.subjects;
  t.labels = set.labels;
  t.features.resize(static_cast<Eigen::Index>(set.volumes.size()), 6);
  for (std::size_t r = 0; r < set.volumes.size(); ++r) {
    const auto f = glcm_features(set.volumes[r], cfg);
    for (int c = 0; c < 6; ++c) t.features(static_cast<Eigen::Index>(r), c) = f[static_cast<std::size_t>(c)];
  }
  return t;
}

std::string feature_csv(const FeatureTable& table) {
  std::string out = "subject_id,label";
  for (auto name : kGlcmFeatureNames) out += "," + std::string(name);
  out += '\n';
  char buf[64];
  for (Eigen::Index r = 0; r < table.features.rows(); ++r) {
    out += table.subjects.at(static_cast<std::size_t>(r)) + "," + std::to_string(table.labels.at(static_cast<std::size_t>(r)));
    for (Eigen::Index c = 0; c < table.features.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), ",%.17g", table.features(r, c));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

FeatureTable parse_feature_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw FormatError("feature CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::string header = "subject_id,label";
  for (auto name : kGlcmFeatureNames) header += "," + std::string(name);
  if (line != header) throw FormatError("feature CSV header must be '" + header + "'");
  std::vector<std::vector<double>> rows;
  FeatureTable t;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(fields, cell, ',')) cells.push_back(cell);
    if (cells.size() != 2 + kGlcmFeatureNames.size()) throw FormatError("feature CSV row has wrong field count");
    if (cells[1] != "0" && cells[1] != "1") throw FormatError("feature CSV label must be 0 or 1");
    t.subjects.push_back(cells[0]);
    t.labels.push_back(cells[1] == "1");
    std::vector<double> row;
    for (std::size_t c = 2; c < cells.size(); ++c) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cells[c].size()) throw FormatError("feature CSV value '" + cells[c] + "' is not a number");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  t.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kGlcmFeatureNames.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      t.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return t;
}

}  // namespace vit3d
