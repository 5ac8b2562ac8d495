#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dasmil/dataset.hpp"
#include "dasmil/train.hpp"

namespace dasmil {

nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

/// Everything an experiment needs, serialisable as
/// {"dataset": {...}, "train": {..., "model": {...}}}.
struct ExperimentConfig {
  DatasetConfig dataset;
  TrainConfig train;
};

nlohmann::json to_json(const ExperimentConfig& c);

/// Merges `patch` into the defaults. Keys the defaults do not have are
/// rejected with a ConfigError naming the full dotted path.
ExperimentConfig experiment_config_from_json(const nlohmann::json& patch);

/// Applies "key=value" overrides to a config document. The key is a dotted
/// path ("train.lr") or a leaf name that occurs exactly once ("lr"). Values
/// are parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Loads an optional JSON file, then applies the overrides in order.
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides);

}  // namespace dasmil
