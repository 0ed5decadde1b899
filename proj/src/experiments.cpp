#include "vit3d/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "vit3d/binary_io.hpp"
#include "vit3d/checkpoint.hpp"
#include "vit3d/error.hpp"
#include "vit3d/rng.hpp"

namespace vit3d {

namespace {

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::string fmt_fraction(double f) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", f);
  return buf;
}

std::uint64_t fingerprint(const LabeledSet& set, std::uint64_t h) {
  for (std::size_t i = 0; i < set.volumes.size(); ++i) {
    h = fnv1a64(set.subjects[i], h);
    h = fnv1a64(set.labels[i] ? "1" : "0", h);
    const auto& d = set.volumes[i].data;
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(d.data()), static_cast<std::size_t>(d.size()) * sizeof(float)), h);
  }
  return h;
}

std::uint64_t data_fingerprint(const ScalingSpec& spec) {
  std::uint64_t h = fingerprint(spec.train_pool, fnv1a64("train"));
  h = fingerprint(spec.val_set, fnv1a64("val", h));
  for (const auto& [name, set] : spec.eval_sets) h = fingerprint(set, fnv1a64(name, h));
  return h;
}

TrainConfig cell_train_config(const ScalingSpec& spec, double fraction, std::uint64_t seed) {
  TrainConfig tc = spec.train;
  tc.seed = seed;
  if (auto it = spec.overrides.find(fraction); it != spec.overrides.end()) {
    if (it->second.epochs) tc.epochs = *it->second.epochs;
    if (it->second.warmup_epochs) tc.warmup_epochs = *it->second.warmup_epochs;
    if (it->second.lr) tc.lr = *it->second.lr;
  }
  return tc;
}

nlohmann::json cell_spec_json(const ScalingSpec& spec, double fraction, std::uint64_t seed, const std::string& model,
                              std::uint64_t data_hash) {
  nlohmann::json j{{"fraction", fraction}, {"seed", seed}, {"model", model}, {"data", hex64(data_hash)}};
  if (model == kTransformer) {
    j["model_config"] = config_to_json(spec.model);
    j["train_config"] = train_config_text(cell_train_config(spec, fraction, seed));
  } else {
    const auto& f = spec.forest;
    j["forest"] = {{"n_trees", f.n_trees},
                   {"max_depth", f.max_depth},
                   {"features_per_split", f.features_per_split},
                   {"min_samples_leaf", f.min_samples_leaf},
                   {"bootstrap", f.bootstrap}};
    j["glcm"] = {{"n_levels", spec.glcm.n_levels}, {"distance", spec.glcm.distance}, {"symmetric", spec.glcm.symmetric}};
  }
  return j;
}

nlohmann::json record_json(const CellRecord& c) {
  nlohmann::json reports = nlohmann::json::object();
  for (const auto& [name, r] : c.reports) reports[name] = report_to_json(r);
  return {{"key", c.key}, {"spec", c.provenance}, {"reports", reports}};
}

CellRecord load_record(const std::filesystem::path& path, const std::string& key, const ScalingSpec& spec) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("result store record " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    if (j.at("key").get<std::string>() != key || hex64(fnv1a64(j.at("spec").dump())) != key) {
      throw IntegrityError("result store record " + path.string() + " does not match its key");
    }
    CellRecord c;
    c.key = key;
    c.ok = true;
    c.reused = true;
    c.provenance = j.at("spec");
    c.fraction = c.provenance.at("fraction").get<double>();
    c.seed = c.provenance.at("seed").get<std::uint64_t>();
    c.model = c.provenance.at("model").get<std::string>();
    for (const auto& [name, set] : spec.eval_sets) c.reports[name] = report_from_json(j.at("reports").at(name));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("result store record " + path.string() + " is incomplete: " + e.what());
  }
}

}  // namespace

std::vector<std::string> nested_subjects(std::vector<std::string> subjects, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractError("subsample fraction must be in (0, 1]");
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  CounterRng rng(seed, fnv1a64("subsample_nested"));
  shuffle(std::span<std::string>(subjects), rng);
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(subjects.size()) - 1e-9));
  if (keep == 0) throw InfeasibleSplitError("subsample keeps no training subjects");
  subjects.resize(keep);
  return subjects;
}

DatasetManifest subsample_nested(const DatasetManifest& manifest, double fraction, std::uint64_t seed) {
  const auto keep = nested_subjects(manifest.filter(Split::Train).subjects(), fraction, seed);
  const std::set<std::string> chosen(keep.begin(), keep.end());
  DatasetManifest out;
  for (const auto& e : manifest.entries) {
    if (e.split != Split::Train || chosen.count(e.subject_id)) out.entries.push_back(e);
  }
  return out;
}

LabeledSet subsample_nested(const LabeledSet& set, double fraction, std::uint64_t seed) {
  const auto keep = nested_subjects(set.subjects, fraction, seed);
  const std::set<std::string> chosen(keep.begin(), keep.end());
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < set.subjects.size(); ++i) {
    if (chosen.count(set.subjects[i])) idx.push_back(i);
  }
  return set.subset(idx);
}

void ScalingSpec::validate() const {
  if (fractions.empty()) throw ConfigError("scaling needs at least one fraction");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (!(fractions[i] > 0.0 && fractions[i] <= 1.0)) throw ConfigError("scaling fractions must be in (0, 1]");
    if (i && !(fractions[i] > fractions[i - 1])) throw ConfigError("scaling fractions must be strictly ascending");
  }
  if (seeds.empty()) throw ConfigError("scaling needs at least one seed");
  if (!transformer && !baseline) throw ConfigError("scaling needs the transformer, the baseline, or both");
  if (eval_sets.empty()) throw ConfigError("scaling needs at least one eval set");
  if (train_pool.volumes.empty()) throw ConfigError("scaling train pool is empty");
  if (transformer) {
    model.validate();
    train.validate();
  }
  if (baseline) {
    forest.validate();
    glcm.validate();
  }
}

std::vector<std::string> ScalingResult::models() const {
  std::vector<std::string> out;
  for (const auto& c : cells) {
    if (std::find(out.begin(), out.end(), c.model) == out.end()) out.push_back(c.model);
  }
  return out;
}

std::vector<std::string> ScalingResult::eval_sets() const {
  std::set<std::string> s;
  for (const auto& c : cells) {
    for (const auto& [name, r] : c.reports) s.insert(name);
  }
  return {s.begin(), s.end()};
}

std::vector<double> ScalingResult::fractions() const {
  std::set<double> s;
  for (const auto& c : cells) s.insert(c.fraction);
  return {s.begin(), s.end()};
}

Aggregate aggregate(const ScalingResult& r, const std::string& model, const std::string& eval_set, double fraction,
                    int metric_index) {
  Aggregate a;
  double sum = 0.0;
  for (const auto& c : r.cells) {
    if (!c.ok || c.model != model || c.fraction != fraction) continue;
    auto it = c.reports.find(eval_set);
    if (it == c.reports.end()) continue;
    const double v = metric_values(it->second)[static_cast<std::size_t>(metric_index)];
    a.min = a.n ? std::min(a.min, v) : v;
    a.max = a.n ? std::max(a.max, v) : v;
    sum += v;
    ++a.n;
  }
  if (a.n) a.mean = sum / a.n;
  return a;
}

std::string cell_key(const ScalingSpec& spec, double fraction, std::uint64_t seed, const std::string& model) {
  return hex64(fnv1a64(cell_spec_json(spec, fraction, seed, model, data_fingerprint(spec)).dump()));
}

ScalingResult run_scaling(const ScalingSpec& spec, const CellLogger& log) {
  spec.validate();
  const auto data_hash = data_fingerprint(spec);
  if (!spec.store_dir.empty()) std::filesystem::create_directories(spec.store_dir);

  std::vector<std::string> models;
  if (spec.transformer) models.push_back(kTransformer);
  if (spec.baseline) models.push_back(kForest);

  // GLCM features depend only on the volumes; compute them once per run.
  std::optional<FeatureTable> pool_features;
  std::map<std::string, FeatureTable> eval_features;
  auto ensure_features = [&] {
    if (pool_features) return;
    pool_features = extract_features(spec.train_pool, spec.glcm);
    for (const auto& [name, set] : spec.eval_sets) eval_features[name] = extract_features(set, spec.glcm);
  };

  ScalingResult result;
  for (double fraction : spec.fractions) {
    for (auto seed : spec.seeds) {
      for (const auto& model : models) {
        CellRecord cell;
        cell.fraction = fraction;
        cell.seed = seed;
        cell.model = model;
        cell.provenance = cell_spec_json(spec, fraction, seed, model, data_hash);
        cell.key = hex64(fnv1a64(cell.provenance.dump()));
        const auto path = spec.store_dir.empty() ? std::filesystem::path() : spec.store_dir / (cell.key + ".json");
        if (!path.empty() && std::filesystem::exists(path)) {
          cell = load_record(path, cell.key, spec);
          if (log) log(cell);
          result.cells.push_back(std::move(cell));
          continue;
        }
        try {
          const auto subset = subsample_nested(spec.train_pool, fraction, seed);
          if (model == kTransformer) {
            const auto tc = cell_train_config(spec, fraction, seed);
            const auto init = init_params(spec.model, seed);
            const auto trained = train(spec.model, init, subset, spec.val_set, tc);
            for (const auto& [name, set] : spec.eval_sets) {
              cell.reports[name] = report({predict_scores(spec.model, trained.params, set.volumes, tc.batch_size), set.labels});
            }
          } else {
            ensure_features();
            std::vector<std::size_t> rows;
            const std::set<std::string> chosen(subset.subjects.begin(), subset.subjects.end());
            for (std::size_t i = 0; i < spec.train_pool.subjects.size(); ++i) {
              if (chosen.count(spec.train_pool.subjects[i])) rows.push_back(i);
            }
            Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), pool_features->features.cols());
            std::vector<int> y;
            for (std::size_t r = 0; r < rows.size(); ++r) {
              x.row(static_cast<Eigen::Index>(r)) = pool_features->features.row(static_cast<Eigen::Index>(rows[r]));
              y.push_back(spec.train_pool.labels[rows[r]]);
            }
            ForestConfig fc = spec.forest;
            fc.seed = seed;
            const auto forest = forest_fit(x, y, fc);
            for (const auto& [name, set] : spec.eval_sets) {
              cell.reports[name] = report({forest_predict(forest, eval_features.at(name).features), set.labels});
            }
          }
          cell.ok = true;
          if (!path.empty()) io::write_file_atomic(path, record_json(cell).dump(2) + "\n");
        } catch (const IntegrityError&) {
          throw;
        } catch (const std::exception& e) {
          cell.ok = false;
          cell.error = e.what();
        }
        if (log) log(cell);
        result.cells.push_back(std::move(cell));
      }
    }
  }
  return result;
}

std::string metrics_table_csv(const ScalingResult& result, const std::string& model, const std::string& eval_set) {
  const auto fractions = result.fractions();
  std::string out = "metric";
  for (double f : fractions) out += "," + fmt_fraction(f);
  out += '\n';
  char buf[64];
  for (std::size_t m = 0; m < kMetricNames.size(); ++m) {
    out += std::string(kMetricNames[m]);
    for (double f : fractions) {
      const auto a = aggregate(result, model, eval_set, f, static_cast<int>(m));
      if (a.n) {
        std::snprintf(buf, sizeof(buf), ",%.6f", a.mean);
        out += buf;
      } else {
        out += ",";
      }
    }
    out += '\n';
  }
  return out;
}

std::string scaling_svg(const ScalingResult& result, const std::string& eval_set) {
  const auto fractions = result.fractions();
  const auto models = result.models();
  const double W = 640, H = 420, left = 60, right = 20, top = 30, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  const double fmax = fractions.empty() ? 1.0 : std::max(1.0, fractions.back());
  auto sx = [&](double f) { return left + pw * f / fmax; };
  auto sy = [&](double auc) { return top + ph * (1.0 - auc); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

  std::string svg;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n", W,
                H, W, H);
  svg += buf;
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof(buf), "<title>Test ROC-AUC vs training fraction (%s)</title>\n", eval_set.c_str());
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n"
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n",
                left, top + ph, left + pw, top + ph, left, top, left, top + ph);
  svg += buf;
  for (int t = 0; t <= 10; t += 2) {
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"end\">%.1f</text>\n", left - 6,
                  sy(t / 10.0) + 4, t / 10.0);
    svg += buf;
  }
  for (double f : fractions) {
    std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\">%s</text>\n",
                  sx(f), top + ph + 16, fmt_fraction(f).c_str());
    svg += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\">fraction of training data</text>\n"
                "<text x=\"14\" y=\"%.1f\" font-size=\"12\" transform=\"rotate(-90 14 %.1f)\" "
                "text-anchor=\"middle\">test ROC-AUC</text>\n",
                left + pw / 2, H - 12, top + ph / 2, top + ph / 2);
  svg += buf;

  for (std::size_t m = 0; m < models.size(); ++m) {
    const char* color = colors[m % 4];
    std::string band_upper, band_lower, line;
    for (double f : fractions) {
      const auto a = aggregate(result, models[m], eval_set, f, 0);
      if (!a.n) continue;
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", sx(f), sy(a.max));
      band_upper += buf;
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", sx(f), sy(a.min));
      band_lower = buf + band_lower;
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", sx(f), sy(a.mean));
      line += buf;
    }
    svg += "<g class=\"model\" data-model=\"" + models[m] + "\">\n";
    svg += std::string("<polygon class=\"band\" fill=\"") + color + "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"" +
           band_upper + band_lower + "\"/>\n";
    svg += std::string("<polyline class=\"series\" fill=\"none\" stroke=\"") + color +
           "\" stroke-width=\"2\" points=\"" + line + "\"/>\n";
    std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" fill=\"%s\">%s</text>\n",
                  left + 10, top + 16 + 16.0 * static_cast<double>(m), color, models[m].c_str());
    svg += buf;
    svg += "</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::vector<std::filesystem::path> emit_outputs(const ScalingResult& result, const std::filesystem::path& out_dir) {
  if (result.cells.empty()) throw ContractError("emit_outputs: empty result");
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  const auto fractions = result.fractions();
  for (const auto& eval : result.eval_sets()) {
    std::string auc = "model,fraction,mean,min,max,n\n";
    char buf[160];
    for (const auto& model : result.models()) {
      auto p = out_dir / ("scaling_" + model + "_" + eval + ".csv");
      io::write_file_atomic(p, metrics_table_csv(result, model, eval));
      written.push_back(p);
      for (double f : fractions) {
        const auto a = aggregate(result, model, eval, f, 0);
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%d\n", model.c_str(), fmt_fraction(f).c_str(), a.mean,
                      a.min, a.max, a.n);
        auc += buf;
      }
    }
    auto p = out_dir / ("scaling_auc_" + eval + ".csv");
    io::write_file_atomic(p, auc);
    written.push_back(p);
    p = out_dir / ("scaling_" + eval + ".svg");
    io::write_file_atomic(p, scaling_svg(result, eval));
    written.push_back(p);
  }
  return written;
}

}  // namespace vit3d
