#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dasmil/rng.hpp"
#include "dasmil/tensor.hpp"

namespace dasmil {

inline constexpr std::size_t kDigitSide = 28;
inline constexpr std::size_t kDigitPixels = kDigitSide * kDigitSide;

/// 28x28 grayscale patch with values in [0, 1], stored row-major.
using Patch = std::array<float, kDigitPixels>;

struct DigitImage {
  Patch pixels{};
  int digit = 0;
};

// ---------------------------------------------------------------------------
// MNIST IDX parsing

/// Images file: big-endian header (magic 0x00000803, count, 28, 28), then
/// count * 784 bytes. Pixels map to [0, 1] by /255. Throws FormatError.
std::vector<Patch> parse_idx_images(std::span<const std::uint8_t> bytes);

/// Labels file: big-endian header (magic 0x00000801, count), then one byte
/// per label in 0..9. Throws FormatError.
std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes);

enum class MnistSplit { Train, Test };

/// Reads {train,t10k}-{images-idx3,labels-idx1}-ubyte from `dir`.
/// Throws IoError when a file is missing.
std::vector<DigitImage> load_mnist(const std::filesystem::path& dir, MnistSplit split);

// ---------------------------------------------------------------------------
// Bags

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct Instance {
  Patch patch{};
  Point centroid;
  /// Ground truth for labelling and analysis only; never a model input.
  int digit = 0;
  bool operator==(const Instance&) const = default;
};

struct Bag {
  std::vector<Instance> instances;
  int label = 0;
  double canvas_width = 0.0;
  double canvas_height = 0.0;
  bool operator==(const Bag&) const = default;

  std::size_t size() const { return instances.size(); }
  std::vector<Point> centroids() const;
};

struct DatasetConfig {
  double canvas_width = 176.0;
  double canvas_height = 176.0;
  double bag_size_mean = 10.0;
  double bag_size_std = 2.0;
  /// Distance threshold between a "0" and a "1", in pixels.
  double tau = 64.0;
  bool inverted = false;
  std::size_t train_count = 300;
  std::size_t test_count = 100;
  /// Share of each split made of negatives that contain both a "0" and a "1".
  double hard_negative_fraction = 0.12;
  std::uint64_t seed = 0;

  /// Throws ConfigError when an invariant does not hold.
  void validate() const;
  double diagonal() const;
};

/// Pairwise Euclidean distances. The upper triangle is computed and mirrored,
/// so the result is exactly symmetric with an exactly zero diagonal.
Tensor distance_matrix(std::span<const Point> centroids);

/// Standard variant: 1 iff some ("0", "1") pair has distance <= tau.
/// Inverted variant: 1 iff some ("0", "1") pair has distance > tau.
int label_bag(std::span<const Instance> instances, double tau, bool inverted);

/// Constraint on negative bags regarding the two key digit classes.
enum class KeyDigits {
  Any,
  /// Must contain at least one "0" and one "1" (a hard negative).
  Both,
  /// Must not contain both a "0" and a "1".
  NotBoth,
};

/// Draws one bag with the requested label by whole-bag rejection sampling.
/// Bag size n = max(2, round(Normal(mean, std))); centroids are uniform in
/// [14, W-14] x [14, H-14]; 28x28 boxes never overlap. Each digit gets 1,000
/// placement attempts before the layout restarts; after 10 failed restarts a
/// GenerationError is thrown.
Bag sample_bag(const DatasetConfig& config, std::span<const DigitImage> pool, Rng& rng, int target_label,
               KeyDigits key_digits = KeyDigits::Any);

struct Dataset {
  std::vector<Bag> train;
  std::vector<Bag> test;
};

/// Exactly half of each split is positive; round(hard_negative_fraction *
/// count) negatives are hard, the remaining negatives lack at least one key
/// digit. Bag i of a split draws from its own derived stream, so the result is
/// a pure function of (config, pools).
Dataset generate_dataset(const DatasetConfig& config, std::span<const DigitImage> train_pool,
                         std::span<const DigitImage> test_pool);

Dataset generate_dataset(const DatasetConfig& config, const std::filesystem::path& mnist_dir);

/// Fraction of negative bags in `bags` containing both a "0" and a "1".
double hard_negative_share(std::span<const Bag> bags);

}  // namespace dasmil
