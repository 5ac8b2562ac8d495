#include "dasmil/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "dasmil/errors.hpp"

namespace dasmil {

namespace {

constexpr double kHalfDigit = kDigitSide / 2.0;
constexpr int kPlacementAttempts = 1000;
constexpr int kPlacementRestarts = 10;
constexpr int kLabelAttempts = 200000;
constexpr std::uint64_t kRoleStream = 0xB01E5ULL;

bool overlaps(const Point& a, const Point& b) {
  return std::abs(a.x - b.x) < static_cast<double>(kDigitSide) &&
         std::abs(a.y - b.y) < static_cast<double>(kDigitSide);
}

std::vector<Point> place_centroids(const DatasetConfig& config, std::size_t n, Rng& rng) {
  for (int restart = 0; restart <= kPlacementRestarts; ++restart) {
    std::vector<Point> placed;
    placed.reserve(n);
    bool failed = false;
    for (std::size_t k = 0; k < n && !failed; ++k) {
      bool ok = false;
      for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
        const Point c{rng.uniform(kHalfDigit, config.canvas_width - kHalfDigit),
                      rng.uniform(kHalfDigit, config.canvas_height - kHalfDigit)};
        if (std::none_of(placed.begin(), placed.end(), [&](const Point& p) { return overlaps(p, c); })) {
          placed.push_back(c);
          ok = true;
          break;
        }
      }
      failed = !ok;
    }
    if (!failed) return placed;
  }
  throw GenerationError("could not place " + std::to_string(n) + " digits on a " +
                        std::to_string(static_cast<int>(config.canvas_width)) + "x" +
                        std::to_string(static_cast<int>(config.canvas_height)) +
                        " canvas after " + std::to_string(kPlacementRestarts) +
                        " restarts; use a larger canvas");
}

bool has_both_key_digits(std::span<const Instance> instances) {
  bool zero = false, one = false;
  for (const auto& inst : instances) {
    zero = zero || inst.digit == 0;
    one = one || inst.digit == 1;
  }
  return zero && one;
}

void check_pool(std::span<const DigitImage> pool) {
  std::array<bool, 10> seen{};
  for (const auto& d : pool)
    if (d.digit >= 0 && d.digit <= 9) seen[static_cast<std::size_t>(d.digit)] = true;
  if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }))
    throw PreconditionError("digit pool must contain all ten classes");
}

enum class Role { Positive, HardNegative, EasyNegative };

std::vector<Bag> generate_split(const DatasetConfig& config, std::span<const DigitImage> pool, std::size_t count,
                                std::uint64_t split_id) {
  const std::size_t positives = count / 2;
  const auto hard = static_cast<std::size_t>(std::llround(config.hard_negative_fraction * static_cast<double>(count)));
  if (hard > count - positives)
    throw ConfigError("hard_negative_fraction asks for more hard negatives than there are negatives");

  std::vector<Role> roles;
  roles.insert(roles.end(), positives, Role::Positive);
  roles.insert(roles.end(), hard, Role::HardNegative);
  roles.insert(roles.end(), count - positives - hard, Role::EasyNegative);
  Rng role_rng = Rng::derive(config.seed, {split_id, kRoleStream});
  role_rng.shuffle(roles);

  std::vector<Bag> bags;
  bags.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = Rng::derive(config.seed, {split_id, i});
    switch (roles[i]) {
      case Role::Positive: bags.push_back(sample_bag(config, pool, rng, 1, KeyDigits::Any)); break;
      case Role::HardNegative: bags.push_back(sample_bag(config, pool, rng, 0, KeyDigits::Both)); break;
      case Role::EasyNegative: bags.push_back(sample_bag(config, pool, rng, 0, KeyDigits::NotBoth)); break;
    }
  }
  return bags;
}

}  // namespace

std::vector<Point> Bag::centroids() const {
  std::vector<Point> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(inst.centroid);
  return out;
}

void DatasetConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (train_count % 2 != 0 || test_count % 2 != 0) throw ConfigError("bag counts must be even");
  if (train_count == 0 || test_count == 0) throw ConfigError("bag counts must be positive");
  if (canvas_width < static_cast<double>(kDigitSide) || canvas_height < static_cast<double>(kDigitSide))
    throw ConfigError("canvas must be at least 28x28");
  if (!(bag_size_std >= 0.0)) throw ConfigError("bag_size_std must be non-negative");
  if (!(hard_negative_fraction >= 0.0 && hard_negative_fraction <= 0.5))
    throw ConfigError("hard_negative_fraction must lie in [0, 0.5]");
}

double DatasetConfig::diagonal() const { return std::hypot(canvas_width, canvas_height); }

Tensor distance_matrix(std::span<const Point> centroids) {
  const std::size_t n = centroids.size();
  if (n == 0) throw PreconditionError("distance_matrix needs at least one point");
  Tensor d({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = centroids[i].x - centroids[j].x;
      const double dy = centroids[i].y - centroids[j].y;
      const double dist = std::sqrt(dx * dx + dy * dy);
      d.at(i, j) = dist;
      d.at(j, i) = dist;
    }
  return d;
}

int label_bag(std::span<const Instance> instances, double tau, bool inverted) {
  for (const auto& a : instances) {
    if (a.digit != 0) continue;
    for (const auto& b : instances) {
      if (b.digit != 1) continue;
      const double dx = a.centroid.x - b.centroid.x;
      const double dy = a.centroid.y - b.centroid.y;
      const double dist = std::sqrt(dx * dx + dy * dy);
      if (inverted ? dist > tau : dist <= tau) return 1;
    }
  }
  return 0;
}

Bag sample_bag(const DatasetConfig& config, std::span<const DigitImage> pool, Rng& rng, int target_label,
               KeyDigits key_digits) {
  check_pool(pool);
  if (target_label != 0 && target_label != 1) throw PreconditionError("target label must be 0 or 1");

  for (int attempt = 0; attempt < kLabelAttempts; ++attempt) {
    const double drawn = std::round(rng.normal(config.bag_size_mean, config.bag_size_std));
    const auto n = static_cast<std::size_t>(std::max(2.0, drawn));
    const std::vector<Point> centroids = place_centroids(config, n, rng);

    Bag bag;
    bag.canvas_width = config.canvas_width;
    bag.canvas_height = config.canvas_height;
    bag.instances.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const DigitImage& d = pool[rng.index(pool.size())];
      bag.instances[k] = Instance{d.pixels, centroids[k], d.digit};
    }
    bag.label = label_bag(bag.instances, config.tau, config.inverted);
    if (bag.label != target_label) continue;
    if (key_digits == KeyDigits::Both && !has_both_key_digits(bag.instances)) continue;
    if (key_digits == KeyDigits::NotBoth && has_both_key_digits(bag.instances)) continue;
    return bag;
  }
  throw GenerationError("no bag with the requested label found after " + std::to_string(kLabelAttempts) +
                        " draws; check tau and canvas size");
}

Dataset generate_dataset(const DatasetConfig& config, std::span<const DigitImage> train_pool,
                         std::span<const DigitImage> test_pool) {
  config.validate();
  check_pool(train_pool);
  check_pool(test_pool);
  Dataset ds;
  ds.train = generate_split(config, train_pool, config.train_count, 0);
  ds.test = generate_split(config, test_pool, config.test_count, 1);
  return ds;
}

Dataset generate_dataset(const DatasetConfig& config, const std::filesystem::path& mnist_dir) {
  const auto train_pool = load_mnist(mnist_dir, MnistSplit::Train);
  const auto test_pool = load_mnist(mnist_dir, MnistSplit::Test);
  return generate_dataset(config, train_pool, test_pool);
}

double hard_negative_share(std::span<const Bag> bags) {
  std::size_t negatives = 0, hard = 0;
  for (const auto& b : bags) {
    if (b.label != 0) continue;
    ++negatives;
    if (has_both_key_digits(b.instances)) ++hard;
  }
  return negatives ? static_cast<double>(hard) / static_cast<double>(negatives) : 0.0;
}

}  // namespace dasmil
