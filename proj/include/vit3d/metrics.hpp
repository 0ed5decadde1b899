#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace vit3d {

struct ScoredLabels {
  std::vector<double> scores;  // probability of the positive class
  std::vector<int> labels;     // 0 or 1

  void validate() const;  // equal lengths, >= 1 sample, labels in {0,1}
  std::size_t positives() const;
  std::size_t negatives() const;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // +inf for the (0,0) endpoint
};

struct YoudenResult {
  double threshold = 0.0;
  double j = 0.0;
};

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct MetricsReport {
  double auc = 0.0;
  double threshold = 0.0;
  double youden_j = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  Confusion confusion;
  std::vector<RocPoint> roc_points;
};

// Mann-Whitney statistic with ties counted half. UndefinedMetricError unless
// both classes are present.
double roc_auc(const ScoredLabels& s);

// Points for thresholds +inf, then every unique score in descending order, with
// the rule "positive iff score >= threshold". Ends at (1,1).
std::vector<RocPoint> roc_curve(const ScoredLabels& s);
double trapezoid_area(const std::vector<RocPoint>& curve);

Confusion confusion_at(const ScoredLabels& s, double threshold);

// Maximizes sensitivity + specificity - 1 over unique observed scores; the
// smallest maximizing threshold wins.
YoudenResult youden_threshold(const ScoredLabels& s);

// Precision and F1 are 0 when their denominators are 0.
MetricsReport report(const ScoredLabels& s);
MetricsReport report_at(const ScoredLabels& s, double threshold);

// Row order of the metric tables.
inline constexpr std::array<std::string_view, 6> kMetricNames{"ROC-AUC",     "Accuracy",    "F1-score",
                                                              "Precision",   "Sensitivity", "Specificity"};
std::array<double, 6> metric_values(const MetricsReport& r);

nlohmann::json report_to_json(const MetricsReport& r, bool include_curve = true);
MetricsReport report_from_json(const nlohmann::json& j);
std::string report_csv(const MetricsReport& r);  // header row + one value row

}  // namespace vit3d
