#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dasmil/bag_io.hpp"
#include "dasmil/dataset.hpp"
#include "dasmil/errors.hpp"

using namespace dasmil;

namespace {

std::vector<std::uint8_t> idx_header(std::uint32_t magic, std::vector<std::uint32_t> dims) {
  std::vector<std::uint8_t> out;
  auto put = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
  };
  put(magic);
  for (auto d : dims) put(d);
  return out;
}

/// Ten classes, `per_class` images each, with class-dependent pixel patterns.
std::vector<DigitImage> synthetic_pool(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DigitImage> pool;
  for (int d = 0; d < 10; ++d)
    for (std::size_t k = 0; k < per_class; ++k) {
      DigitImage img;
      img.digit = d;
      for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
      pool.push_back(img);
    }
  return pool;
}

/// 1 iff some (0, 1) pair satisfies the rule, by checking every ordered pair.
int all_pairs_oracle(const Bag& bag, double tau, bool inverted) {
  for (const auto& a : bag.instances)
    for (const auto& b : bag.instances) {
      if (a.digit != 0 || b.digit != 1) continue;
      const double dx = a.centroid.x - b.centroid.x, dy = a.centroid.y - b.centroid.y;
      const double d = std::sqrt(dx * dx + dy * dy);
      if (inverted ? d > tau : d <= tau) return 1;
    }
  return 0;
}

bool boxes_disjoint(const Bag& bag) {
  for (std::size_t i = 0; i < bag.size(); ++i)
    for (std::size_t j = i + 1; j < bag.size(); ++j) {
      const auto& a = bag.instances[i].centroid;
      const auto& b = bag.instances[j].centroid;
      if (std::abs(a.x - b.x) < 28.0 && std::abs(a.y - b.y) < 28.0) return false;
    }
  return true;
}

DatasetConfig small_config() {
  DatasetConfig c;
  c.train_count = 40;
  c.test_count = 20;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(Idx, ParsesOneImage) {
  auto bytes = idx_header(0x803, {1, 28, 28});
  std::vector<std::uint8_t> payload(784, 0);
  payload[0] = 255;
  payload[1] = 128;
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  const auto images = parse_idx_images(bytes);
  ASSERT_EQ(images.size(), 1u);
  EXPECT_EQ(images[0][0], 1.0f);
  EXPECT_EQ(images[0][1], static_cast<float>(128.0 / 255.0));
  EXPECT_EQ(images[0][2], 0.0f);
}

TEST(Idx, ImageFormatErrorsCarryOffsets) {
  auto bad_magic = idx_header(0x801, {1, 28, 28});
  EXPECT_THROW(parse_idx_images(bad_magic), FormatError);
  auto bad_dims = idx_header(0x803, {1, 27, 28});
  bad_dims.resize(bad_dims.size() + 27 * 28);
  EXPECT_THROW(parse_idx_images(bad_dims), FormatError);
  auto truncated = idx_header(0x803, {2, 28, 28});
  truncated.resize(truncated.size() + 784 + 10);
  try {
    parse_idx_images(truncated);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 0u);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
}

TEST(Idx, Labels) {
  auto bytes = idx_header(0x801, {2});
  bytes.push_back(7);
  bytes.push_back(9);
  EXPECT_EQ(parse_idx_labels(bytes), (std::vector<int>{7, 9}));
  EXPECT_TRUE(parse_idx_labels(idx_header(0x801, {0})).empty());
  auto short_payload = idx_header(0x801, {3});
  short_payload.push_back(1);
  EXPECT_THROW(parse_idx_labels(short_payload), FormatError);
  auto bad_label = idx_header(0x801, {1});
  bad_label.push_back(10);
  EXPECT_THROW(parse_idx_labels(bad_label), FormatError);
}

TEST(Idx, MissingFilesAreIoErrors) {
  EXPECT_THROW(load_mnist("/nonexistent/mnist", MnistSplit::Train), IoError);
}

TEST(DistanceMatrix, PythagoreanAndSinglePoint) {
  const std::vector<Point> pts = {{0, 0}, {3, 4}};
  EXPECT_EQ(distance_matrix(pts), Tensor::matrix({{0, 5}, {5, 0}}));
  const std::vector<Point> one = {{7, 7}};
  EXPECT_EQ(distance_matrix(one), Tensor::matrix({{0}}));
}

TEST(DistanceMatrix, RandomPointsMatchPairOracle) {
  Rng rng(1);
  std::vector<Point> pts;
  for (int i = 0; i < 5; ++i) pts.push_back({rng.uniform(0, 100), rng.uniform(0, 100)});
  const Tensor d = distance_matrix(pts);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_EQ(d.at(i, j), d.at(j, i));
      EXPECT_NEAR(d.at(i, j), std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y), 1e-12);
      for (std::size_t k = 0; k < 5; ++k) EXPECT_LE(d.at(i, k), d.at(i, j) + d.at(j, k) + 1e-12);
    }
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(d.at(i, i), 0.0);
}

TEST(LabelBag, InclusiveThresholdAndInversion) {
  std::vector<Instance> inst(2);
  inst[0].digit = 0;
  inst[0].centroid = {0, 0};
  inst[1].digit = 1;
  inst[1].centroid = {3, 4};
  EXPECT_EQ(label_bag(inst, 5.0, false), 1);
  EXPECT_EQ(label_bag(inst, 5.0, true), 0);
  inst[0].digit = 7;
  EXPECT_EQ(label_bag(inst, 5.0, false), 0);
  EXPECT_EQ(label_bag(inst, 5.0, true), 0);
}

TEST(SampleBag, RespectsTargetLabelMarginsAndOverlap) {
  const auto pool = synthetic_pool(3, 2);
  DatasetConfig c;
  Rng rng(3);
  for (int i = 0; i < 60; ++i) {
    const int target = i % 2;
    const Bag bag = sample_bag(c, pool, rng, target);
    EXPECT_EQ(label_bag(bag.instances, c.tau, c.inverted), target);
    EXPECT_GE(bag.size(), 2u);
    EXPECT_TRUE(boxes_disjoint(bag));
    for (const auto& inst : bag.instances) {
      EXPECT_GE(inst.centroid.x, 14.0);
      EXPECT_LE(inst.centroid.x, c.canvas_width - 14.0);
      EXPECT_GE(inst.centroid.y, 14.0);
      EXPECT_LE(inst.centroid.y, c.canvas_height - 14.0);
    }
  }
}

TEST(SampleBag, TwoInstanceBagsOnSmallCanvasStayInsideMargins) {
  const auto pool = synthetic_pool(2, 4);
  DatasetConfig c;
  c.canvas_width = c.canvas_height = 128;
  c.bag_size_mean = 2;
  c.bag_size_std = 0;
  c.tau = 40;
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const Bag bag = sample_bag(c, pool, rng, i % 2);
    ASSERT_EQ(bag.size(), 2u);
    for (const auto& inst : bag.instances) {
      EXPECT_GE(inst.centroid.x, 14.0);
      EXPECT_LE(inst.centroid.x, 114.0);
      EXPECT_GE(inst.centroid.y, 14.0);
      EXPECT_LE(inst.centroid.y, 114.0);
    }
  }
}

TEST(SampleBag, KeyDigitConstraints) {
  const auto pool = synthetic_pool(2, 6);
  DatasetConfig c;
  Rng rng(7);
  for (int i = 0; i < 30; ++i) {
    const Bag hard = sample_bag(c, pool, rng, 0, KeyDigits::Both);
    bool has0 = false, has1 = false;
    for (const auto& inst : hard.instances) {
      has0 |= inst.digit == 0;
      has1 |= inst.digit == 1;
    }
    EXPECT_TRUE(has0 && has1);
    EXPECT_EQ(hard.label, 0);
    const Bag easy = sample_bag(c, pool, rng, 0, KeyDigits::NotBoth);
    has0 = has1 = false;
    for (const auto& inst : easy.instances) {
      has0 |= inst.digit == 0;
      has1 |= inst.digit == 1;
    }
    EXPECT_FALSE(has0 && has1);
  }
}

TEST(SampleBag, CrowdedCanvasIsGenerationError) {
  const auto pool = synthetic_pool(1, 8);
  DatasetConfig c;
  c.canvas_width = c.canvas_height = 60;
  c.bag_size_mean = 12;
  c.bag_size_std = 0;
  Rng rng(9);
  try {
    sample_bag(c, pool, rng, 0);
    FAIL();
  } catch (const GenerationError& e) {
    EXPECT_NE(std::string(e.what()).find("larger canvas"), std::string::npos);
  }
}

TEST(SampleBag, PoolMissingAClassIsPreconditionError) {
  auto pool = synthetic_pool(1, 10);
  pool.pop_back();
  DatasetConfig c;
  Rng rng(1);
  EXPECT_THROW(sample_bag(c, pool, rng, 1), PreconditionError);
}

TEST(GenerateDataset, OracleAgreementOnAThousandBags) {
  const auto train_pool = synthetic_pool(5, 11), test_pool = synthetic_pool(5, 12);
  DatasetConfig c;
  c.train_count = 800;
  c.test_count = 200;
  const Dataset d = generate_dataset(c, train_pool, test_pool);
  for (const auto* split : {&d.train, &d.test}) {
    std::size_t pos = 0;
    for (const Bag& b : *split) {
      ASSERT_EQ(b.label, all_pairs_oracle(b, c.tau, false));
      pos += b.label;
    }
    EXPECT_EQ(2 * pos, split->size());
  }
}

TEST(GenerateDataset, DefaultCountsAndHardNegatives) {
  const auto train_pool = synthetic_pool(4, 13), test_pool = synthetic_pool(4, 14);
  DatasetConfig c;
  const Dataset d = generate_dataset(c, train_pool, test_pool);
  ASSERT_EQ(d.train.size(), 300u);
  ASSERT_EQ(d.test.size(), 100u);
  std::size_t hard = 0;
  for (const Bag& b : d.train) {
    bool has0 = false, has1 = false;
    for (const auto& inst : b.instances) {
      has0 |= inst.digit == 0;
      has1 |= inst.digit == 1;
    }
    hard += b.label == 0 && has0 && has1;
  }
  EXPECT_EQ(hard, 36u);  // 12% of 300 bags
  EXPECT_DOUBLE_EQ(hard_negative_share(d.train), 36.0 / 150.0);
}

TEST(GenerateDataset, SplitsDrawFromTheirOwnPools) {
  auto train_pool = synthetic_pool(3, 15), test_pool = synthetic_pool(3, 16);
  for (auto& img : train_pool) img.pixels[0] = 0.25f;
  for (auto& img : test_pool) img.pixels[0] = 0.75f;
  const Dataset d = generate_dataset(small_config(), train_pool, test_pool);
  for (const Bag& b : d.train)
    for (const auto& inst : b.instances) EXPECT_EQ(inst.patch[0], 0.25f);
  for (const Bag& b : d.test)
    for (const auto& inst : b.instances) EXPECT_EQ(inst.patch[0], 0.75f);
}

TEST(GenerateDataset, SameSeedIsBitIdenticalAndOtherSeedDiffers) {
  const auto train_pool = synthetic_pool(3, 17), test_pool = synthetic_pool(3, 18);
  const DatasetConfig c = small_config();
  const Dataset a = generate_dataset(c, train_pool, test_pool);
  const Dataset b = generate_dataset(c, train_pool, test_pool);
  EXPECT_EQ(encode_bags(a.train, {}), encode_bags(b.train, {}));
  EXPECT_EQ(encode_bags(a.test, {}), encode_bags(b.test, {}));
  DatasetConfig other = c;
  other.seed = 6;
  EXPECT_NE(encode_bags(generate_dataset(other, train_pool, test_pool).train, {}), encode_bags(a.train, {}));
}

TEST(GenerateDataset, InvertedLabelsFollowTheOracle) {
  const auto train_pool = synthetic_pool(4, 19), test_pool = synthetic_pool(4, 20);
  DatasetConfig c;
  c.inverted = true;
  c.train_count = 160;
  c.test_count = 40;
  const Dataset d = generate_dataset(c, train_pool, test_pool);
  std::size_t single_pair = 0;
  for (const auto* split : {&d.train, &d.test})
    for (const Bag& b : *split) {
      ASSERT_EQ(b.label, all_pairs_oracle(b, c.tau, true));
      std::size_t zeros = 0, ones = 0;
      for (const auto& inst : b.instances) {
        zeros += inst.digit == 0;
        ones += inst.digit == 1;
      }
      // With one key pair the two rules are complementary.
      if (zeros == 1 && ones == 1) {
        ++single_pair;
        EXPECT_EQ(label_bag(b.instances, c.tau, false), 1 - b.label);
      }
    }
  EXPECT_GT(single_pair, 0u);
}

TEST(GenerateDataset, ConfigValidation) {
  const auto pool = synthetic_pool(1, 21);
  DatasetConfig c = small_config();
  c.tau = 0;
  EXPECT_THROW(generate_dataset(c, pool, pool), ConfigError);
  c = small_config();
  c.train_count = 41;
  EXPECT_THROW(generate_dataset(c, pool, pool), ConfigError);
}

TEST(BagIo, RoundTripIsBitIdentical) {
  const auto train_pool = synthetic_pool(2, 22);
  const Dataset d = generate_dataset(small_config(), train_pool, train_pool);
  const auto path = std::filesystem::temp_directory_path() / "dasmil_test_roundtrip.bags";
  serialize_bags(d.train, path, {{"seed", 5}});
  const BagFile file = deserialize_bags(path);
  EXPECT_EQ(file.bags, d.train);
  EXPECT_EQ(file.config.at("seed").get<int>(), 5);
  for (const Bag& b : file.bags) EXPECT_EQ(b.label, all_pairs_oracle(b, 64.0, false));
}

TEST(BagIo, EmptyListIsValid) {
  const std::string bytes = encode_bags({}, {});
  EXPECT_TRUE(decode_bags(bytes).bags.empty());
}

TEST(BagIo, CorruptionIsDetected) {
  const auto pool = synthetic_pool(1, 23);
  DatasetConfig c = small_config();
  c.train_count = 4;
  c.test_count = 2;
  const Dataset d = generate_dataset(c, pool, pool);
  const std::string good = encode_bags(d.train, {});

  std::string flipped = good;
  flipped[good.size() - 100] ^= 0x01;
  EXPECT_THROW(decode_bags(flipped), FormatError);

  std::string header_flip = good;
  header_flip[20] ^= 0x20;
  EXPECT_THROW(decode_bags(header_flip), FormatError);

  std::string version = good;
  version[7] = '2';
  try {
    decode_bags(version);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }

  EXPECT_THROW(decode_bags(good.substr(0, good.size() / 2)), FormatError);
  EXPECT_THROW(decode_bags("XXXXXXXX"), FormatError);
}
