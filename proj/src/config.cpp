#include "dasmil/config.hpp"

#include <fstream>

#include "dasmil/errors.hpp"

namespace dasmil {

namespace {

void merge_known(nlohmann::json& base, const nlohmann::json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + where + "'");
    if (base[key].is_object())
      merge_known(base[key], value, where);
    else
      base[key] = value;
  }
}

void find_leaves(const nlohmann::json& doc, const std::string& leaf, const std::string& path,
                 std::vector<std::string>& found) {
  for (const auto& [key, value] : doc.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (value.is_object())
      find_leaves(value, leaf, where, found);
    else if (key == leaf)
      found.push_back(where);
  }
}

nlohmann::json::json_pointer to_pointer(const std::string& dotted) {
  std::string p;
  std::size_t start = 0;
  while (start <= dotted.size()) {
    const std::size_t dot = dotted.find('.', start);
    p += "/" + dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return nlohmann::json::json_pointer(p);
}

}  // namespace

nlohmann::json to_json(const DatasetConfig& c) {
  return {{"canvas_width", c.canvas_width},
          {"canvas_height", c.canvas_height},
          {"bag_size_mean", c.bag_size_mean},
          {"bag_size_std", c.bag_size_std},
          {"tau", c.tau},
          {"inverted", c.inverted},
          {"train_count", c.train_count},
          {"test_count", c.test_count},
          {"hard_negative_fraction", c.hard_negative_fraction},
          {"seed", c.seed}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.canvas_width = j.at("canvas_width").get<double>();
  c.canvas_height = j.at("canvas_height").get<double>();
  c.bag_size_mean = j.at("bag_size_mean").get<double>();
  c.bag_size_std = j.at("bag_size_std").get<double>();
  c.tau = j.at("tau").get<double>();
  c.inverted = j.at("inverted").get<bool>();
  c.train_count = j.at("train_count").get<std::size_t>();
  c.test_count = j.at("test_count").get<std::size_t>();
  c.hard_negative_fraction = j.at("hard_negative_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"dataset", to_json(c.dataset)}, {"train", to_json(c.train)}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& patch) {
  nlohmann::json doc = to_json(ExperimentConfig{});
  merge_known(doc, patch, "");
  try {
    ExperimentConfig c{dataset_config_from_json(doc.at("dataset")), train_config_from_json(doc.at("train"))};
    c.dataset.validate();
    c.train.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  if (key.find('.') == std::string::npos) {
    std::vector<std::string> found;
    find_leaves(doc, key, "", found);
    if (found.empty()) throw ConfigError("unknown config key '" + key + "'");
    if (found.size() > 1) {
      std::string all;
      for (const auto& f : found) all += (all.empty() ? "" : ", ") + f;
      throw ConfigError("config key '" + key + "' is ambiguous: " + all);
    }
    key = found[0];
  }
  const auto ptr = to_pointer(key);
  if (!doc.contains(ptr) || doc[ptr].is_object()) throw ConfigError("unknown config key '" + key + "'");
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  doc[ptr] = value;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc = to_json(ExperimentConfig{});
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    nlohmann::json file = nlohmann::json::parse(in, nullptr, false);
    if (file.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
    merge_known(doc, file, "");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return experiment_config_from_json(doc);
}

}  // namespace dasmil
