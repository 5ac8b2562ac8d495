#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dasmil/metrics.hpp"
#include "dasmil/model.hpp"
#include "dasmil/optim.hpp"

namespace dasmil {

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;
  ModelConfig model;
  /// Score the test split after every epoch to find the best epoch.
  bool track_best_epoch = true;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct RunReport {
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<double> epoch_loss;
  /// Test balanced accuracy after each epoch (empty unless tracked).
  std::vector<double> epoch_test_balanced_accuracy;
  std::size_t best_epoch = 0;
  double best_test_balanced_accuracy = 0.0;
  EvalResult train;
  EvalResult test;
  double positive_weight = 1.0;
  double wall_time_s = 0.0;

  /// Everything except wall time; equal for reruns of the same job.
  nlohmann::json deterministic_json() const;
  nlohmann::json to_json() const;
};

struct TrainOutcome {
  MilModel model;
  RunReport report;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// Visit order of the training bags in `epoch`: a pure function of its inputs.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t count);

/// Negatives over positives in the training split.
double positive_class_weight(std::span<const Bag> bags);

/// Batch-size-one training with AdamW and the weighted BCE loss. Deterministic
/// given (config, bags).
TrainOutcome train_model(const TrainConfig& config, std::span<const Bag> train, std::span<const Bag> test,
                         const EpochCallback& on_epoch = {});

struct Stat {
  double mean = 0.0;
  double std = 0.0;
};

/// Mean and sample standard deviation (n - 1 denominator; 0 for one value).
Stat summarize(std::span<const double> values);

struct SeedSummary {
  std::vector<TrainOutcome> runs;
  Stat train_balanced_accuracy, test_balanced_accuracy, test_auroc, best_epoch_test_balanced_accuracy;
  /// Highest final test balanced accuracy over the seeds.
  double best_run_test_balanced_accuracy = 0.0;

  nlohmann::json to_json() const;
};

SeedSummary summarize_runs(std::vector<TrainOutcome> runs);

/// Worker count from DASMIL_THREADS, else the hardware concurrency.
std::size_t worker_count();

/// Runs fn(0..count-1) on up to `threads` workers. The first exception is rethrown.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// One training run per seed, seeds in parallel.
SeedSummary run_seeds(const TrainConfig& config, std::span<const Bag> train, std::span<const Bag> test,
                      std::span<const std::uint64_t> seeds, std::size_t threads = 0);

struct GridSpec {
  std::vector<double> lrs;
  std::vector<double> weight_decays;
};

struct GridCell {
  double lr = 0.0;
  double weight_decay = 0.0;
  SeedSummary summary;
};

struct GridResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;
};

/// Exhaustive search by mean test balanced accuracy; ties go to the lower lr,
/// then the lower weight decay.
GridResult grid_search(const GridSpec& grid, const TrainConfig& base, std::span<const Bag> train,
                       std::span<const Bag> test, std::span<const std::uint64_t> seeds, std::size_t threads = 0);

struct AblationRow {
  std::string name;
  ModelConfig model;
  SeedSummary summary;
};

/// The embedding ablation configurations, in table order.
std::vector<std::pair<std::string, ModelConfig>> ablation_configs(const ModelConfig& base);

std::vector<AblationRow> run_ablation(const TrainConfig& base, std::span<const Bag> train, std::span<const Bag> test,
                                      std::span<const std::uint64_t> seeds, std::size_t threads = 0);

}  // namespace dasmil
