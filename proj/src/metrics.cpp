#include "dasmil/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "dasmil/errors.hpp"

namespace dasmil {

namespace {

void check_labels(std::size_t n, std::span<const int> labels) {
  if (n != labels.size())
    throw DimensionError("metric inputs differ in length: " + std::to_string(n) + " vs " +
                         std::to_string(labels.size()));
  bool pos = false, neg = false;
  for (int y : labels) {
    if (y != 0 && y != 1) throw MetricError("labels must be 0 or 1");
    (y == 1 ? pos : neg) = true;
  }
  if (!pos || !neg) throw MetricError("metric needs both classes in the labels");
}

}  // namespace

Confusion confusion_counts(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw DimensionError("predictions and labels differ in length");
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] != 0;
    if (labels[i] == 1)
      ++(p ? c.tp : c.fn);
    else
      ++(p ? c.fp : c.tn);
  }
  return c;
}

double balanced_accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_labels(preds.size(), labels);
  const Confusion c = confusion_counts(preds, labels);
  const double tpr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  const double tnr = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return (tpr + tnr) / 2.0;
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_labels(scores.size(), labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Ranks are doubled so midranks stay integral and the statistic is exact.
  std::uint64_t doubled_rank_sum = 0;
  std::uint64_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t doubled_midrank = (i + 1) + j;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) {
        doubled_rank_sum += doubled_midrank;
        ++positives;
      }
    i = j;
  }
  const std::uint64_t negatives = n - positives;
  const std::uint64_t doubled_u = doubled_rank_sum - positives * (positives + 1);
  return static_cast<double>(doubled_u) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

std::vector<int> bag_labels(std::span<const Bag> bags) {
  std::vector<int> labels;
  labels.reserve(bags.size());
  for (const Bag& b : bags) labels.push_back(b.label);
  return labels;
}

EvalResult evaluate_scores(std::vector<double> scores, std::span<const int> labels) {
  EvalResult r;
  std::vector<int> preds;
  preds.reserve(scores.size());
  for (double s : scores) preds.push_back(s >= 0.5 ? 1 : 0);
  r.balanced_accuracy = balanced_accuracy(preds, labels);
  r.auroc = auroc(scores, labels);
  r.confusion = confusion_counts(preds, labels);
  r.scores = std::move(scores);
  return r;
}

EvalResult evaluate(MilModel& model, std::span<const Bag> bags) {
  std::vector<double> scores;
  scores.reserve(bags.size());
  for (const Bag& b : bags) scores.push_back(model.score(b));
  const auto labels = bag_labels(bags);
  return evaluate_scores(std::move(scores), labels);
}

nlohmann::json to_json(const Confusion& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}; }

nlohmann::json to_json(const EvalResult& r, bool with_scores) {
  nlohmann::json j = {
      {"balanced_accuracy", r.balanced_accuracy}, {"auroc", r.auroc}, {"confusion", to_json(r.confusion)}};
  if (with_scores) j["scores"] = r.scores;
  return j;
}

nlohmann::json metrics_record(const std::string& variant, std::uint64_t seed, const std::string& split,
                              const EvalResult& r, std::size_t epochs, double wall_time_s) {
  return {{"variant", variant},
          {"seed", seed},
          {"split", split},
          {"balanced_accuracy", r.balanced_accuracy},
          {"auroc", r.auroc},
          {"confusion", to_json(r.confusion)},
          {"epochs", epochs},
          {"wall_time_s", wall_time_s}};
}

}  // namespace dasmil
