#pragma once

#include <filesystem>

#include "json.hpp"

#include "dasmil/autodiff.hpp"

namespace dasmil {

/// Checkpoint container:
///
///   "DASCKPT1"                 8-byte magic
///   u64 little-endian          length of the JSON header in bytes
///   JSON header                {"format": 1, "parameters": [{"name", "shape",
///                               "trainable"}...], plus caller metadata}
///   f64 little-endian arrays   parameter values, concatenated in header order
///
/// `metadata` typically carries "model", "hyperparameters" and "seed".
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& metadata,
                     const ParameterList& params);

/// Header only; throws CheckpointError if the file is not a checkpoint.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

/// Loads values into `params`, matching by name and shape. Every parameter in
/// the list must be present in the file and vice versa. Returns the header.
nlohmann::json load_checkpoint(const std::filesystem::path& path, const ParameterList& params);

}  // namespace dasmil
