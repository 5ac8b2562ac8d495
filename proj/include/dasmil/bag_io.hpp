#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dasmil/dataset.hpp"

namespace dasmil {

/// Bag container layout (all integers little-endian):
///
///   "DASMIL01"        magic; the last two characters are the format version
///   u64               length of the JSON header
///   JSON header       {"version", "canvas": [w, h], "bag_count",
///                      "instance_counts", "labels", "centroids": [[[x, y]...]...],
///                      "digits", "config"}
///   f32 patches       784 floats per instance, bags and instances in header order
///   u32 CRC32         over every byte between the magic and the trailer
struct BagFile {
  std::vector<Bag> bags;
  nlohmann::json config;
};

std::string encode_bags(std::span<const Bag> bags, const nlohmann::json& config_echo);
BagFile decode_bags(std::string_view bytes);

void serialize_bags(std::span<const Bag> bags, const std::filesystem::path& path,
                    const nlohmann::json& config_echo = nlohmann::json::object());
/// Throws FormatError on a bad magic, unsupported version, checksum failure or
/// malformed header; IoError when the file cannot be read.
BagFile deserialize_bags(const std::filesystem::path& path);

std::uint32_t crc32(std::string_view bytes);

}  // namespace dasmil
