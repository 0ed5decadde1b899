#include "vit3d/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "vit3d/binary_io.hpp"
#include "vit3d/error.hpp"
#include "vit3d/rng.hpp"

namespace vit3d {

namespace {

constexpr std::string_view kManifestHeader = "subject_id,path,label,split";

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    fields.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(name) + "', expected train, val or test");
}

void DatasetManifest::validate() const {
  std::map<std::string, Split> seen;
  for (const auto& e : entries) {
    if (e.subject_id.empty()) throw ContractError("manifest entry with empty subject_id");
    if (e.path.empty()) throw ContractError("manifest entry for " + e.subject_id + " has an empty path");
    if (e.label != 0 && e.label != 1) {
      throw ContractError("manifest label for " + e.subject_id + " must be 0 or 1, got " + std::to_string(e.label));
    }
    auto [it, inserted] = seen.emplace(e.subject_id, e.split);
    if (!inserted && it->second != e.split) {
      throw ContractError("subject " + e.subject_id + " appears in more than one split");
    }
  }
}

DatasetManifest DatasetManifest::filter(Split split) const {
  DatasetManifest out;
  for (const auto& e : entries) {
    if (e.split == split) out.entries.push_back(e);
  }
  return out;
}

std::vector<std::string> DatasetManifest::subjects() const {
  std::set<std::string> s;
  for (const auto& e : entries) s.insert(e.subject_id);
  return {s.begin(), s.end()};
}

std::string manifest_csv(const DatasetManifest& manifest) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& e : manifest.entries) {
    if (e.subject_id.find_first_of(",\n") != std::string::npos || e.path.find_first_of(",\n") != std::string::npos) {
      throw ContractError("manifest fields may not contain commas or newlines: " + e.subject_id);
    }
    out << e.subject_id << ',' << e.path << ',' << e.label << ',' << to_string(e.split) << '\n';
  }
  return out.str();
}

DatasetManifest parse_manifest_csv(std::string_view text) {
  DatasetManifest manifest;
  std::size_t pos = 0;
  bool header = true;
  int line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = trim_cr(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (header) {
      if (line.size() >= 3 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
      if (line != kManifestHeader) {
        throw FormatError("manifest header must be '" + std::string(kManifestHeader) + "'");
      }
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected 4 fields");
    }
    ManifestEntry e;
    e.subject_id = f[0];
    e.path = f[1];
    if (f[2] == "0") {
      e.label = 0;
    } else if (f[2] == "1") {
      e.label = 1;
    } else {
      throw FormatError("manifest line " + std::to_string(line_no) + ": label must be 0 or 1");
    }
    e.split = parse_split(f[3]);
    manifest.entries.push_back(std::move(e));
  }
  if (header) throw FormatError("manifest is empty (missing header)");
  manifest.validate();
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& path) { return parse_manifest_csv(io::read_text(path)); }

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  io::write_file_atomic(path, manifest_csv(manifest));
}

DatasetManifest split_by_subject(const std::vector<ManifestEntry>& entries, SplitFractions fractions,
                                 std::uint64_t seed) {
  const std::array<double, 3> f{fractions.train, fractions.val, fractions.test};
  for (double x : f) {
    if (!(x > 0.0)) throw ContractError("split fractions must be positive");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw ContractError("split fractions must sum to 1");

  std::set<std::string> unique;
  for (const auto& e : entries) unique.insert(e.subject_id);
  std::vector<std::string> subjects(unique.begin(), unique.end());
  const std::size_t n = subjects.size();
  if (n < 3) {
    throw InfeasibleSplitError("need at least 3 distinct subjects for a 3-way split, got " + std::to_string(n));
  }

  // Largest-remainder apportionment.
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double quota = f[k] * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    remainder[k] = quota - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) counts[order[i % 3]] += 1;
  for (std::size_t k = 0; k < 3; ++k) {
    if (counts[k] == 0) {
      auto largest = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      counts[largest] -= 1;
      counts[k] = 1;
    }
  }

  CounterRng rng(seed, fnv1a64("split_by_subject"));
  shuffle(std::span<std::string>(subjects), rng);
  std::map<std::string, Split> assignment;
  std::size_t idx = 0;
  const std::array<Split, 3> splits{Split::Train, Split::Val, Split::Test};
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t c = 0; c < counts[k]; ++c) assignment[subjects[idx++]] = splits[k];
  }

  DatasetManifest out;
  out.entries = entries;
  for (auto& e : out.entries) e.split = assignment.at(e.subject_id);
  out.validate();
  return out;
}

void SynthSpec::validate() const {
  if (n_per_class < 1) throw ConfigError("synthetic n_per_class must be >= 1");
  for (int d : dims) {
    if (d < 1) throw ConfigError("synthetic dims must be positive");
  }
  if (!(effect_size >= 0.0)) throw ConfigError("synthetic effect_size must be >= 0");
  if (!(noise_sigma > 0.0)) throw ConfigError("synthetic noise_sigma must be > 0");
}

std::vector<bool> ellipsoid_mask(Dims3 dims) {
  std::vector<bool> mask(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
  std::array<double, 3> center{};
  std::array<double, 3> semi{};
  for (std::size_t a = 0; a < 3; ++a) {
    center[a] = 0.5 * (dims[a] - 1);
    semi[a] = dims[a] / 4.0;
  }
  std::size_t i = 0;
  for (int z = 0; z < dims[2]; ++z) {
    for (int y = 0; y < dims[1]; ++y) {
      for (int x = 0; x < dims[0]; ++x, ++i) {
        const double dx = (x - center[0]) / semi[0];
        const double dy = (y - center[1]) / semi[1];
        const double dz = (z - center[2]) / semi[2];
        mask[i] = dx * dx + dy * dy + dz * dz <= 1.0;
      }
    }
  }
  return mask;
}

std::pair<std::vector<Volume>, DatasetManifest> generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  const auto mask = ellipsoid_mask(spec.dims);
  const int total = 2 * spec.n_per_class;
  std::vector<Volume> volumes;
  volumes.reserve(static_cast<std::size_t>(total));
  DatasetManifest manifest;
  const auto offset = static_cast<float>(spec.effect_size * spec.noise_sigma);
  const auto voxels = static_cast<Eigen::Index>(mask.size());
  for (int i = 0; i < total; ++i) {
    const int label = i % 2;
    CounterRng rng(spec.seed, static_cast<std::uint64_t>(i));
    Eigen::ArrayXf data(voxels);
    for (Eigen::Index v = 0; v < voxels; ++v) {
      data[v] = static_cast<float>(spec.noise_sigma * rng.normal());
    }
    if (label == 1) {
      for (Eigen::Index v = 0; v < voxels; ++v) {
        if (mask[static_cast<std::size_t>(v)]) data[v] -= offset;
      }
    }
    volumes.emplace_back(spec.dims, Spacing3{1.0f, 1.0f, 1.0f}, std::move(data));
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%05d", i);
    manifest.entries.push_back({id, std::string(id) + ".vol", label, Split::Train});
  }
  return {std::move(volumes), std::move(manifest)};
}

void LabeledSet::push_back(Volume v, int label, std::string subject) {
  volumes.push_back(std::move(v));
  labels.push_back(label);
  subjects.push_back(std::move(subject));
}

LabeledSet LabeledSet::subset(const std::vector<std::size_t>& indices) const {
  LabeledSet out;
  for (auto i : indices) out.push_back(volumes.at(i), labels.at(i), subjects.at(i));
  return out;
}

LabeledSet load_split(const DatasetManifest& manifest, Split split, const std::filesystem::path& base_dir) {
  LabeledSet out;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base_dir / p;
    out.push_back(read_volume(p), e.label, e.subject_id);
  }
  return out;
}

LabeledSet load_all(const DatasetManifest& manifest, const std::filesystem::path& base_dir) {
  LabeledSet out;
  for (const auto& e : manifest.entries) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base_dir / p;
    out.push_back(read_volume(p), e.label, e.subject_id);
  }
  return out;
}

LabeledSet select_split(const std::vector<Volume>& volumes, const DatasetManifest& manifest, Split split) {
  if (volumes.size() != manifest.entries.size()) {
    throw ContractError("select_split: volumes and manifest entries differ in length");
  }
  LabeledSet out;
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (e.split == split) out.push_back(volumes[i], e.label, e.subject_id);
  }
  return out;
}

}  // namespace vit3d
