#include "dasmil/bag_io.hpp"

#include <zlib.h>

#include "binary_io.hpp"
#include "dasmil/errors.hpp"

namespace dasmil {

namespace {

constexpr std::string_view kMagicStem = "DASMIL";
constexpr std::string_view kVersion = "01";
constexpr std::size_t kMagicSize = 8;

}  // namespace

std::uint32_t crc32(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32_z(crc, reinterpret_cast<const Bytef*>(bytes.data()), bytes.size());
  return static_cast<std::uint32_t>(crc);
}

std::string encode_bags(std::span<const Bag> bags, const nlohmann::json& config_echo) {
  nlohmann::json header;
  header["version"] = 1;
  header["canvas"] = bags.empty() ? nlohmann::json::array({0.0, 0.0})
                                  : nlohmann::json::array({bags[0].canvas_width, bags[0].canvas_height});
  header["bag_count"] = bags.size();
  auto& counts = header["instance_counts"] = nlohmann::json::array();
  auto& labels = header["labels"] = nlohmann::json::array();
  auto& centroids = header["centroids"] = nlohmann::json::array();
  auto& digits = header["digits"] = nlohmann::json::array();
  for (const Bag& bag : bags) {
    counts.push_back(bag.size());
    labels.push_back(bag.label);
    auto pts = nlohmann::json::array();
    auto ds = nlohmann::json::array();
    for (const auto& inst : bag.instances) {
      pts.push_back({inst.centroid.x, inst.centroid.y});
      ds.push_back(inst.digit);
    }
    centroids.push_back(std::move(pts));
    digits.push_back(std::move(ds));
  }
  header["config"] = config_echo;
  const std::string text = header.dump();

  std::string body;
  detail::put_u64(body, text.size());
  body += text;
  for (const Bag& bag : bags)
    for (const auto& inst : bag.instances)
      for (float v : inst.patch) detail::put_f32(body, v);

  std::string out;
  out.reserve(kMagicSize + body.size() + 4);
  out += kMagicStem;
  out += kVersion;
  out += body;
  detail::put_u32(out, crc32(body));
  return out;
}

BagFile decode_bags(std::string_view bytes) {
  if (bytes.size() < kMagicSize + 8 + 4 || bytes.substr(0, kMagicStem.size()) != kMagicStem)
    throw FormatError("not a bag file (bad magic)", 0);
  if (bytes.substr(kMagicStem.size(), 2) != kVersion)
    throw FormatError("unsupported bag file version '" + std::string(bytes.substr(kMagicStem.size(), 2)) + "'",
                      kMagicStem.size());

  const std::string data(bytes);
  const std::string_view body = bytes.substr(kMagicSize, bytes.size() - kMagicSize - 4);
  const std::uint32_t stored = detail::get_u32(data, bytes.size() - 4);
  if (crc32(body) != stored) throw FormatError("bag file checksum mismatch", bytes.size() - 4);

  const std::uint64_t len = detail::get_u64(data, kMagicSize);
  const std::size_t header_at = kMagicSize + 8;
  if (header_at + len > bytes.size() - 4) throw FormatError("bag file header truncated", header_at);

  BagFile file;
  std::size_t offset = header_at + len;
  try {
    const auto header = nlohmann::json::parse(data.substr(header_at, len));
    if (header.at("version").get<int>() != 1)
      throw FormatError("unsupported bag header version", header_at);
    const auto canvas = header.at("canvas");
    const auto count = header.at("bag_count").get<std::size_t>();
    const auto& counts = header.at("instance_counts");
    const auto& labels = header.at("labels");
    const auto& centroids = header.at("centroids");
    const auto& digits = header.at("digits");
    if (counts.size() != count || labels.size() != count || centroids.size() != count || digits.size() != count)
      throw FormatError("bag file header arrays disagree with bag_count", header_at);
    file.config = header.value("config", nlohmann::json::object());

    file.bags.resize(count);
    for (std::size_t b = 0; b < count; ++b) {
      Bag& bag = file.bags[b];
      bag.canvas_width = canvas.at(0).get<double>();
      bag.canvas_height = canvas.at(1).get<double>();
      bag.label = labels[b].get<int>();
      const auto n = counts[b].get<std::size_t>();
      if (centroids[b].size() != n || digits[b].size() != n)
        throw FormatError("bag " + std::to_string(b) + " header arrays disagree with its instance count", header_at);
      bag.instances.resize(n);
      for (std::size_t k = 0; k < n; ++k) {
        Instance& inst = bag.instances[k];
        inst.centroid = Point{centroids[b][k].at(0).get<double>(), centroids[b][k].at(1).get<double>()};
        inst.digit = digits[b][k].get<int>();
        if (offset + 4 * kDigitPixels > bytes.size() - 4) throw FormatError("bag file payload truncated", offset);
        for (std::size_t p = 0; p < kDigitPixels; ++p) inst.patch[p] = detail::get_f32(data, offset + 4 * p);
        offset += 4 * kDigitPixels;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed bag file header: ") + e.what(), header_at);
  }
  if (offset != bytes.size() - 4) throw FormatError("bag file has trailing bytes before the checksum", offset);
  return file;
}

void serialize_bags(std::span<const Bag> bags, const std::filesystem::path& path, const nlohmann::json& config_echo) {
  detail::write_file(path, encode_bags(bags, config_echo));
}

BagFile deserialize_bags(const std::filesystem::path& path) { return decode_bags(detail::read_file(path)); }

}  // namespace dasmil
