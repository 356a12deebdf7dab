#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace salaud {

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (melanoma, naevus) pairs ranked correctly, ties counting one half.
/// Labels are 0/1 with 1 positive; both classes must be present.
double auc(std::span<const double> probabilities, std::span<const int> labels);

/// TP / (TP + FN) with melanoma (label 1) positive and a prediction of
/// melanoma whenever p >= threshold. Missed melanomas are the costly error
/// in this setting, so recall is reported next to AUC.
double recall(std::span<const double> probabilities, std::span<const int> labels, double threshold = 0.5);

struct ConfusionCounts {
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

ConfusionCounts confusion(std::span<const double> probabilities, std::span<const int> labels,
                          double threshold = 0.5);

struct MetricsRecord {
  double auc = 0.0;
  double recall = 0.0;
  double accuracy = 0.0;
  ConfusionCounts counts;
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<double> probabilities;
};

MetricsRecord evaluate_predictions(std::vector<std::string> ids, std::vector<int> labels,
                                   std::vector<double> probabilities, double threshold = 0.5);

void to_json(nlohmann::json& j, const MetricsRecord& m);
void from_json(const nlohmann::json& j, MetricsRecord& m);

}  // namespace salaud
