#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dasmil/dataset.hpp"
#include "dasmil/model.hpp"

namespace dasmil {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  bool operator==(const Confusion&) const = default;
};

struct EvalResult {
  double balanced_accuracy = 0.0;
  double auroc = 0.0;
  Confusion confusion;
  std::vector<double> scores;
  bool operator==(const EvalResult&) const = default;
};

Confusion confusion_counts(std::span<const int> preds, std::span<const int> labels);

/// (TPR + TNR) / 2. Throws MetricError unless both classes are present.
double balanced_accuracy(std::span<const int> preds, std::span<const int> labels);

/// Mann-Whitney statistic with midranks for ties. Throws MetricError unless
/// both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Scores every bag in eval mode and thresholds at 0.5.
EvalResult evaluate(MilModel& model, std::span<const Bag> bags);
EvalResult evaluate_scores(std::vector<double> scores, std::span<const int> labels);

std::vector<int> bag_labels(std::span<const Bag> bags);

nlohmann::json to_json(const Confusion& c);
nlohmann::json to_json(const EvalResult& r, bool with_scores = false);

/// {variant, seed, split, balanced_accuracy, auroc, confusion, epochs, wall_time_s}
nlohmann::json metrics_record(const std::string& variant, std::uint64_t seed, const std::string& split,
                              const EvalResult& r, std::size_t epochs, double wall_time_s);

}  // namespace dasmil
