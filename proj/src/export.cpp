#include "dasmil/export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "binary_io.hpp"
#include "dasmil/errors.hpp"

namespace dasmil {

namespace {

void require_matrix(const Tensor& alpha) {
  if (alpha.rank() != 2) throw DimensionError("attention export expects a matrix, got " + shape_string(alpha.shape()));
}

}  // namespace

std::string attention_csv(const Tensor& alpha) {
  require_matrix(alpha);
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < alpha.dim(0); ++i) {
    for (std::size_t j = 0; j < alpha.dim(1); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", alpha.at(i, j));
      if (j) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::string attention_pgm(const Tensor& alpha) {
  require_matrix(alpha);
  const auto values = alpha.values();
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  std::string out = "P5\n" + std::to_string(alpha.dim(1)) + " " + std::to_string(alpha.dim(0)) + "\n255\n";
  for (double v : values) {
    const double level = range > 0.0 ? std::round(255.0 * (v - *lo) / range) : 0.0;
    out += static_cast<char>(static_cast<unsigned char>(std::clamp(level, 0.0, 255.0)));
  }
  return out;
}

HeatmapFormat parse_heatmap_format(const std::string& name) {
  if (name == "csv") return HeatmapFormat::Csv;
  if (name == "pgm") return HeatmapFormat::Pgm;
  throw ConfigError("unknown heatmap format '" + name + "' (expected csv or pgm)");
}

void write_attention(const std::filesystem::path& path, const Tensor& alpha, HeatmapFormat format) {
  detail::write_file(path, format == HeatmapFormat::Csv ? attention_csv(alpha) : attention_pgm(alpha));
}

}  // namespace dasmil
