#include "vit3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "vit3d/error.hpp"

namespace vit3d {

namespace {

void require_both_classes(const ScoredLabels& s, const char* what) {
  s.validate();
  if (s.positives() == 0 || s.negatives() == 0) {
    throw UndefinedMetricError(std::string(what) + " needs at least one positive and one negative sample");
  }
}

double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

void ScoredLabels::validate() const {
  if (scores.size() != labels.size()) throw ContractError("scores and labels differ in length");
  if (scores.empty()) throw ContractError("no scored samples");
  for (int l : labels) {
    if (l != 0 && l != 1) throw ContractError("labels must be 0 or 1");
  }
  for (double x : scores) {
    if (!std::isfinite(x)) throw ContractError("scores must be finite");
  }
}

std::size_t ScoredLabels::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}
std::size_t ScoredLabels::negatives() const { return labels.size() - positives(); }

double roc_auc(const ScoredLabels& s) {
  require_both_classes(s, "ROC-AUC");
  // Midranks over the pooled sample; U = rank sum of positives - n1(n1+1)/2.
  std::vector<std::size_t> order(s.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && s.scores[order[j]] == s.scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (s.labels[order[k]] == 1) pos_rank_sum += midrank;
    }
    i = j;
  }
  const auto n1 = static_cast<double>(s.positives());
  const auto n0 = static_cast<double>(s.negatives());
  return (pos_rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
}

std::vector<RocPoint> roc_curve(const ScoredLabels& s) {
  require_both_classes(s, "ROC curve");
  std::vector<std::size_t> order(s.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
  const auto P = static_cast<double>(s.positives());
  const auto N = static_cast<double>(s.negatives());
  std::vector<RocPoint> curve{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = s.scores[order[i]];
    while (i < order.size() && s.scores[order[i]] == t) {
      (s.labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    curve.push_back({static_cast<double>(fp) / N, static_cast<double>(tp) / P, t});
  }
  return curve;
}

double trapezoid_area(const std::vector<RocPoint>& curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  }
  return area;
}

Confusion confusion_at(const ScoredLabels& s, double threshold) {
  s.validate();
  Confusion c;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    const bool predicted = s.scores[i] >= threshold;
    if (s.labels[i] == 1) {
      (predicted ? c.tp : c.fn) += 1;
    } else {
      (predicted ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

YoudenResult youden_threshold(const ScoredLabels& s) {
  const auto curve = roc_curve(s);
  const auto P = static_cast<long long>(s.positives());
  const auto N = static_cast<long long>(s.negatives());
  // J = tp/P - fp/N; ranking by tp*N - fp*P keeps ties exact. curve[1..] has
  // thresholds in descending order, so `>=` ends on the smallest maximizer.
  std::size_t best = 1;
  long long best_key = std::numeric_limits<long long>::min();
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const long long tp = std::llround(curve[i].tpr * static_cast<double>(P));
    const long long fp = std::llround(curve[i].fpr * static_cast<double>(N));
    const long long key = tp * N - fp * P;
    if (key >= best_key) {
      best_key = key;
      best = i;
    }
  }
  return {curve[best].threshold, curve[best].tpr - curve[best].fpr};
}

MetricsReport report_at(const ScoredLabels& s, double threshold) {
  MetricsReport r;
  r.auc = roc_auc(s);
  r.roc_points = roc_curve(s);
  r.threshold = threshold;
  r.confusion = confusion_at(s, threshold);
  const auto& c = r.confusion;
  const auto tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const auto tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  r.accuracy = (tp + tn) / (tp + tn + fp + fn);
  r.precision = safe_ratio(tp, tp + fp);
  r.sensitivity = safe_ratio(tp, tp + fn);
  r.specificity = safe_ratio(tn, tn + fp);
  r.f1 = safe_ratio(2.0 * r.precision * r.sensitivity, r.precision + r.sensitivity);
  r.youden_j = r.sensitivity + r.specificity - 1.0;
  return r;
}

MetricsReport report(const ScoredLabels& s) { return report_at(s, youden_threshold(s).threshold); }

std::array<double, 6> metric_values(const MetricsReport& r) {
  return {r.auc, r.accuracy, r.f1, r.precision, r.sensitivity, r.specificity};
}

nlohmann::json report_to_json(const MetricsReport& r, bool include_curve) {
  nlohmann::json j;
  j["auc"] = r.auc;
  j["threshold"] = r.threshold;
  j["youden_j"] = r.youden_j;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision;
  j["f1"] = r.f1;
  j["sensitivity"] = r.sensitivity;
  j["specificity"] = r.specificity;
  j["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}};
  if (include_curve) {
    auto pts = nlohmann::json::array();
    for (const auto& p : r.roc_points) {
      // JSON has no infinity; the first point's threshold is written as null.
      pts.push_back({p.fpr, p.tpr, std::isfinite(p.threshold) ? nlohmann::json(p.threshold) : nlohmann::json()});
    }
    j["roc"] = std::move(pts);
  }
  return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.auc = j.at("auc").get<double>();
  r.threshold = j.at("threshold").get<double>();
  r.youden_j = j.at("youden_j").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  r.precision = j.at("precision").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.sensitivity = j.at("sensitivity").get<double>();
  r.specificity = j.at("specificity").get<double>();
  const auto& c = j.at("confusion");
  r.confusion = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                 c.at("fn").get<std::size_t>()};
  if (j.contains("roc")) {
    for (const auto& p : j.at("roc")) {
      r.roc_points.push_back({p.at(0).get<double>(), p.at(1).get<double>(),
                              p.at(2).is_null() ? std::numeric_limits<double>::infinity() : p.at(2).get<double>()});
    }
  }
  return r;
}

std::string report_csv(const MetricsReport& r) {
  std::ostringstream out;
  out.precision(10);
  for (std::size_t i = 0; i < kMetricNames.size(); ++i) out << (i ? "," : "") << kMetricNames[i];
  out << '\n';
  const auto v = metric_values(r);
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  out << '\n';
  return out.str();
}

}  // namespace vit3d
