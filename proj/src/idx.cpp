#include <cstdint>

#include "binary_io.hpp"
#include "dasmil/dataset.hpp"
#include "dasmil/errors.hpp"

namespace dasmil {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t at) {
  if (at + 4 > bytes.size()) throw FormatError("IDX header truncated", bytes.size());
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace

std::vector<Patch> parse_idx_images(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != 0x00000803) throw FormatError("bad IDX image magic " + std::to_string(magic), 0);
  const std::uint32_t count = read_be32(bytes, 4);
  const std::uint32_t rows = read_be32(bytes, 8);
  const std::uint32_t cols = read_be32(bytes, 12);
  if (rows != kDigitSide || cols != kDigitSide)
    throw FormatError("IDX images must be 28x28, got " + std::to_string(rows) + "x" + std::to_string(cols), 8);
  const std::size_t need = 16 + std::size_t{count} * kDigitPixels;
  if (bytes.size() < need)
    throw FormatError("IDX image payload truncated: need " + std::to_string(need) + " bytes", bytes.size());

  std::vector<Patch> images(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* src = bytes.data() + 16 + i * kDigitPixels;
    for (std::size_t p = 0; p < kDigitPixels; ++p) images[i][p] = static_cast<float>(src[p]) / 255.0f;
  }
  return images;
}

std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != 0x00000801) throw FormatError("bad IDX label magic " + std::to_string(magic), 0);
  const std::uint32_t count = read_be32(bytes, 4);
  if (bytes.size() != 8 + std::size_t{count})
    throw FormatError("IDX label count " + std::to_string(count) + " does not match payload of " +
                          std::to_string(bytes.size() - 8) + " bytes",
                      8);
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t v = bytes[8 + i];
    if (v > 9) throw FormatError("IDX label " + std::to_string(v) + " outside 0..9", 8 + i);
    labels[i] = v;
  }
  return labels;
}

std::vector<DigitImage> load_mnist(const std::filesystem::path& dir, MnistSplit split) {
  const std::string prefix = split == MnistSplit::Train ? "train" : "t10k";
  const auto images_path = dir / (prefix + "-images-idx3-ubyte");
  const auto labels_path = dir / (prefix + "-labels-idx1-ubyte");
  for (const auto& p : {images_path, labels_path})
    if (!std::filesystem::exists(p)) throw IoError("missing MNIST file '" + p.string() + "'");

  const std::string image_bytes = detail::read_file(images_path);
  const std::string label_bytes = detail::read_file(labels_path);
  auto images = parse_idx_images(as_bytes(image_bytes));
  auto labels = parse_idx_labels(as_bytes(label_bytes));
  if (images.size() != labels.size())
    throw FormatError(std::to_string(images.size()) + " images but " + std::to_string(labels.size()) + " labels", 4);

  std::vector<DigitImage> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out[i] = DigitImage{images[i], labels[i]};
  return out;
}

}  // namespace dasmil
