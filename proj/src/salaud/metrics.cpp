#include "salaud/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "salaud/error.hpp"

namespace salaud {

namespace {

void check_inputs(std::span<const double> p, std::span<const int> labels) {
  require(p.size() == labels.size(), ErrorCode::InvalidArgument, "probabilities and labels differ in length");
  for (int l : labels) require(l == 0 || l == 1, ErrorCode::InvalidArgument, "labels must be 0 or 1");
}

}  // namespace

double auc(std::span<const double> p, std::span<const int> labels) {
  check_inputs(p, labels);
  const std::size_t n = p.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });

  // Midranks (1-based) are multiples of 1/2, so the rank sum is exact.
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && p[order[j]] == p[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  require(positives > 0 && negatives > 0, ErrorCode::Domain, "AUC is undefined unless both classes are present");
  const double np = static_cast<double>(positives);
  const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(negatives));
}

ConfusionCounts confusion(std::span<const double> p, std::span<const int> labels, double threshold) {
  check_inputs(p, labels);
  ConfusionCounts c;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool predicted = p[i] >= threshold;
    if (labels[i] == 1) {
      predicted ? ++c.tp : ++c.fn;
    } else {
      predicted ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

double recall(std::span<const double> p, std::span<const int> labels, double threshold) {
  const ConfusionCounts c = confusion(p, labels, threshold);
  require(c.tp + c.fn > 0, ErrorCode::Domain, "recall is undefined without melanoma examples");
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

MetricsRecord evaluate_predictions(std::vector<std::string> ids, std::vector<int> labels,
                                   std::vector<double> probabilities, double threshold) {
  MetricsRecord m;
  m.auc = auc(probabilities, labels);
  m.counts = confusion(probabilities, labels, threshold);
  m.recall = recall(probabilities, labels, threshold);
  m.accuracy = static_cast<double>(m.counts.tp + m.counts.tn) / static_cast<double>(labels.size());
  m.ids = std::move(ids);
  m.labels = std::move(labels);
  m.probabilities = std::move(probabilities);
  return m;
}

void to_json(nlohmann::json& j, const MetricsRecord& m) {
  j = nlohmann::json{{"auc", m.auc},
                     {"recall", m.recall},
                     {"accuracy", m.accuracy},
                     {"confusion", {{"tp", m.counts.tp}, {"fp", m.counts.fp}, {"tn", m.counts.tn}, {"fn", m.counts.fn}}},
                     {"ids", m.ids},
                     {"labels", m.labels},
                     {"probabilities", m.probabilities}};
}

void from_json(const nlohmann::json& j, MetricsRecord& m) {
  m.auc = j.at("auc").get<double>();
  m.recall = j.at("recall").get<double>();
  m.accuracy = j.at("accuracy").get<double>();
  const auto& c = j.at("confusion");
  m.counts = ConfusionCounts{c.at("tp").get<int>(), c.at("fp").get<int>(), c.at("tn").get<int>(), c.at("fn").get<int>()};
  m.ids = j.at("ids").get<std::vector<std::string>>();
  m.labels = j.at("labels").get<std::vector<int>>();
  m.probabilities = j.at("probabilities").get<std::vector<double>>();
}

}  // namespace salaud
