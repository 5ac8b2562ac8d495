#pragma once

#include <filesystem>
#include <string>

#include "dasmil/tensor.hpp"

namespace dasmil {

/// One CSV row per matrix row, values printed with 17 significant digits.
std::string attention_csv(const Tensor& alpha);

/// Binary 8-bit PGM (P5), linearly scaled so the minimum maps to 0 and the
/// maximum to 255. A constant matrix maps to 0.
std::string attention_pgm(const Tensor& alpha);

enum class HeatmapFormat { Csv, Pgm };

HeatmapFormat parse_heatmap_format(const std::string& name);
void write_attention(const std::filesystem::path& path, const Tensor& alpha, HeatmapFormat format);

}  // namespace dasmil
