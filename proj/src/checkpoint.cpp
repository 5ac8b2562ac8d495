#include "dasmil/checkpoint.hpp"

#include <map>

#include "binary_io.hpp"
#include "dasmil/errors.hpp"

namespace dasmil {

namespace {

constexpr char kMagic[] = "DASCKPT1";
constexpr std::size_t kMagicSize = 8;

struct Parsed {
  nlohmann::json header;
  std::string bytes;
  std::size_t payload_offset = 0;
};

Parsed parse(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = detail::read_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
  if (bytes.size() < kMagicSize + 8 || bytes.compare(0, kMagicSize, kMagic) != 0)
    throw CheckpointError("'" + path.string() + "' is not a checkpoint file");
  const std::uint64_t len = detail::get_u64(bytes, kMagicSize);
  if (kMagicSize + 8 + len > bytes.size()) throw CheckpointError("checkpoint header truncated");
  Parsed p;
  try {
    p.header = nlohmann::json::parse(bytes.substr(kMagicSize + 8, len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  p.payload_offset = kMagicSize + 8 + len;
  p.bytes = std::move(bytes);
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& metadata,
                     const ParameterList& params) {
  nlohmann::json header = metadata;
  header["format"] = 1;
  header["parameters"] = nlohmann::json::array();
  for (const Parameter* p : params)
    header["parameters"].push_back({{"name", p->name}, {"shape", p->value.shape()}, {"trainable", p->trainable}});
  const std::string text = header.dump();

  std::string out(kMagic, kMagicSize);
  detail::put_u64(out, text.size());
  out += text;
  for (const Parameter* p : params)
    for (double v : p->value.data()) detail::put_f64(out, v);
  detail::write_file(path, out);
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) { return parse(path).header; }

nlohmann::json load_checkpoint(const std::filesystem::path& path, const ParameterList& params) {
  Parsed p = parse(path);
  const auto& entries = p.header.at("parameters");

  struct Slot {
    Shape shape;
    std::size_t offset;
  };
  std::map<std::string, Slot> slots;
  std::size_t offset = p.payload_offset;
  for (const auto& e : entries) {
    Shape shape = e.at("shape").get<Shape>();
    slots[e.at("name").get<std::string>()] = Slot{shape, offset};
    offset += 8 * shape_size(shape);
  }
  if (offset != p.bytes.size())
    throw CheckpointError("checkpoint payload has " + std::to_string(p.bytes.size() - p.payload_offset) +
                          " bytes, header describes " + std::to_string(offset - p.payload_offset));
  if (slots.size() != params.size())
    throw CheckpointError("checkpoint holds " + std::to_string(slots.size()) + " parameters, model expects " +
                          std::to_string(params.size()));

  for (Parameter* param : params) {
    auto it = slots.find(param->name);
    if (it == slots.end()) throw CheckpointError("checkpoint lacks parameter '" + param->name + "'");
    if (it->second.shape != param->value.shape())
      throw CheckpointError("parameter '" + param->name + "' has shape " + shape_string(it->second.shape) +
                            " in checkpoint, model expects " + shape_string(param->value.shape()));
    auto w = param->value.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = detail::get_f64(p.bytes, it->second.offset + 8 * i);
  }
  for (const auto& e : entries)
    for (Parameter* param : params)
      if (param->name == e.at("name").get<std::string>()) param->trainable = e.value("trainable", true);
  return p.header;
}

}  // namespace dasmil
