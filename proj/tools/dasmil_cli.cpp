#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dasmil/bag_io.hpp"
#include "dasmil/checkpoint.hpp"
#include "dasmil/config.hpp"
#include "dasmil/errors.hpp"
#include "dasmil/export.hpp"
#include "dasmil/metrics.hpp"
#include "dasmil/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dasmil;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kInputMissing = 2, kDataCorrupt = 3, kCheckpointMismatch = 4, kUnsupported = 5 };

struct UnsupportedVariant : Error {
  using Error::Error;
};

struct Split {
  std::vector<Bag> train;
  std::vector<Bag> test;
  json config;
};

Split load_split(const fs::path& dir) {
  for (const char* name : {"train.bags", "test.bags"})
    if (!fs::exists(dir / name)) throw IoError("missing " + (dir / name).string());
  BagFile train = deserialize_bags(dir / "train.bags");
  BagFile test = deserialize_bags(dir / "test.bags");
  return {std::move(train.bags), std::move(test.bags), std::move(train.config)};
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto dash = item.find('-');
    try {
      if (dash != std::string::npos && dash > 0) {
        const auto lo = std::stoull(item.substr(0, dash));
        const auto hi = std::stoull(item.substr(dash + 1));
        for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
      } else {
        seeds.push_back(std::stoull(item));
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad seed list '" + text + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::logic_error&) {
      throw ConfigError("bad number list '" + text + "'");
    }
  }
  return out;
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::string file_crc(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return hex32(crc32(ss.str()));
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

json checkpoint_metadata(const TrainOutcome& run) {
  return {{"model", to_json(run.model.config())}, {"train", run.report.config}, {"seed", run.report.seed}};
}

MilModel load_model(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw CheckpointError("checkpoint " + checkpoint.string() + " not found");
  const json header = read_checkpoint_header(checkpoint);
  ModelConfig config;
  try {
    config = model_config_from_json(header.at("model"));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint has no usable model config: ") + e.what());
  }
  Rng rng(0);
  // Resolved configs carry explicit distance scales, so the diagonal is unused.
  MilModel model(config, 1.0, rng);
  load_checkpoint(checkpoint, model.parameters());
  return model;
}

EvalResult evaluate_checked(MilModel& model, const std::vector<Bag>& bags) {
  try {
    return evaluate(model, bags);
  } catch (const DimensionError& e) {
    throw CheckpointError(std::string("checkpoint does not fit the data: ") + e.what());
  }
}

std::string fmt_stat(const Stat& s) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3f +- %.3f", s.mean, s.std);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) { return s + std::string(width > s.size() ? width - s.size() : 0, ' '); }

// --- subcommands -------------------------------------------------------------

struct GenDataArgs {
  std::string mnist_dir = "data/mnist";
  std::string config;
  std::vector<std::string> overrides;
  std::string out = "out/data";
  bool inverted = false;
};

int cmd_gen_data(const GenDataArgs& a) {
  auto overrides = a.overrides;
  if (a.inverted) overrides.push_back("dataset.inverted=true");
  const ExperimentConfig config = load_experiment_config(a.config, overrides);
  const Dataset data = generate_dataset(config.dataset, a.mnist_dir);
  const json echo = to_json(config.dataset);
  const fs::path out = a.out;
  serialize_bags(data.train, out / "train.bags", echo);
  serialize_bags(data.test, out / "test.bags", echo);

  json manifest = {{"variant", config.dataset.inverted ? "inv" : "standard"}, {"config", echo}, {"splits", json::object()}};
  for (const auto& [name, bags] : {std::pair{"train", &data.train}, std::pair{"test", &data.test}}) {
    std::size_t positives = 0, instances = 0;
    for (const Bag& b : *bags) {
      positives += b.label == 1;
      instances += b.size();
    }
    const fs::path file = out / (std::string(name) + ".bags");
    manifest["splits"][name] = {{"file", file.filename().string()},
                                {"bags", bags->size()},
                                {"instances", instances},
                                {"positives", positives},
                                {"positive_fraction", static_cast<double>(positives) / bags->size()},
                                {"hard_negative_share", hard_negative_share(*bags)},
                                {"crc32", file_crc(file)}};
  }
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << manifest.dump(2) << "\n";
  return kOk;
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::vector<std::string> overrides;
  std::string variant;
  std::string seeds = "0";
  std::string out = "out/train";
};

int cmd_train(const TrainArgs& a) {
  auto overrides = a.overrides;
  if (!a.variant.empty()) overrides.push_back("train.model.variant=\"" + a.variant + "\"");
  const ExperimentConfig config = load_experiment_config(a.config, overrides);
  const Split split = load_split(a.data);
  const auto seeds = parse_seeds(a.seeds);
  SeedSummary summary = run_seeds(config.train, split.train, split.test, seeds);

  const fs::path out = a.out;
  const std::string variant = variant_name(config.train.model.variant);
  std::string lines;
  for (auto& run : summary.runs) {
    json line = metrics_record(variant, run.report.seed, "test", run.report.test, config.train.epochs,
                               run.report.wall_time_s);
    line["train"] = to_json(run.report.train);
    line["best_epoch"] = run.report.best_epoch;
    line["best_test_balanced_accuracy"] = run.report.best_test_balanced_accuracy;
    line["epoch_loss"] = run.report.epoch_loss;
    line["config"] = run.report.config;
    line["data"] = split.config;
    lines += line.dump() + "\n";
    save_checkpoint(out / "checkpoints" / (variant + "-seed" + std::to_string(run.report.seed) + ".ckpt"),
                    checkpoint_metadata(run), run.model.parameters());
  }
  write_text(out / "report.jsonl", lines);
  json s = summary.to_json();
  s["variant"] = variant;
  write_text(out / "summary.json", s.dump(2) + "\n");
  std::cout << s.dump(2) << "\n";
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data) {
  MilModel model = load_model(checkpoint);
  const Split split = load_split(data);
  json out = {{"variant", variant_name(model.config().variant)},
              {"checkpoint", checkpoint},
              {"train", to_json(evaluate_checked(model, split.train), true)},
              {"test", to_json(evaluate_checked(model, split.test), true)}};
  std::cout << out.dump(2) << "\n";
  return kOk;
}

struct ExportArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::size_t bag_index = 0;
  std::string format = "csv";
  std::string out;
};

int cmd_export_attention(const ExportArgs& a) {
  const HeatmapFormat format = parse_heatmap_format(a.format);
  MilModel model = load_model(a.checkpoint);
  if (!variant_has_attention_matrix(model.config().variant))
    throw UnsupportedVariant("variant " + variant_name(model.config().variant) + " has no attention matrix");
  const Split split = load_split(a.data);
  const auto& bags = a.split == "train" ? split.train : split.test;
  if (a.split != "train" && a.split != "test") throw ConfigError("split must be train or test");
  if (a.bag_index >= bags.size())
    throw ConfigError("bag index " + std::to_string(a.bag_index) + " out of range (" + std::to_string(bags.size()) +
                      " bags)");
  const Bag& bag = bags[a.bag_index];
  Tape tape;
  Rng unused(0);
  ForwardResult fwd;
  try {
    fwd = model.forward(tape, bag, Mode::Eval, unused);
  } catch (const DimensionError& e) {
    throw CheckpointError(std::string("checkpoint does not fit the data: ") + e.what());
  }
  const std::string out = a.out.empty() ? "attention." + a.format : a.out;
  write_attention(out, *fwd.attention, format);
  json info = {{"bag_index", a.bag_index}, {"split", a.split},      {"label", bag.label},
               {"instances", bag.size()},  {"score", fwd.score.value().item()}, {"out", out}};
  json digits = json::array();
  for (const auto& inst : bag.instances) digits.push_back(inst.digit);
  info["digits"] = digits;
  std::cout << info.dump() << "\n";
  return kOk;
}

struct AblateArgs {
  std::vector<std::string> data;
  std::string config;
  std::vector<std::string> overrides;
  std::string seeds = "0-4";
  std::string out = "out/ablation";
};

int cmd_ablate(const AblateArgs& a) {
  const ExperimentConfig config = load_experiment_config(a.config, a.overrides);
  const auto seeds = parse_seeds(a.seeds);
  json table = {{"seeds", seeds}, {"datasets", json::array()}, {"rows", json::array()}};
  std::vector<std::vector<AblationRow>> results;
  for (const auto& dir : a.data) {
    const Split split = load_split(dir);
    results.push_back(run_ablation(config.train, split.train, split.test, seeds));
    table["datasets"].push_back({{"path", dir}, {"config", split.config}});
  }
  const auto names = ablation_configs(config.train.model);
  std::string text = pad("Model", 22) + pad("Params", 8);
  for (const auto& dir : a.data) text += pad(fs::path(dir).filename().string() + " train", 18) + pad("test", 18);
  text += "\n";
  for (std::size_t r = 0; r < names.size(); ++r) {
    json row = {{"name", names[r].first}, {"model", to_json(names[r].second)}, {"results", json::array()}};
    std::size_t params = 0;
    if (!results.empty() && !results[0][r].summary.runs.empty())
      params = results[0][r].summary.runs[0].model.parameter_count();
    row["params"] = params;
    text += pad(names[r].first, 22) + pad(std::to_string(params), 8);
    for (const auto& res : results) {
      const auto& s = res[r].summary;
      row["results"].push_back(s.to_json());
      text += pad(fmt_stat(s.train_balanced_accuracy), 18) + pad(fmt_stat(s.test_balanced_accuracy), 18);
    }
    text += "\n";
    table["rows"].push_back(row);
  }
  const fs::path out = a.out;
  write_text(out / "ablation.json", table.dump(2) + "\n");
  write_text(out / "ablation.txt", text);
  std::cout << text;
  return kOk;
}

struct GridArgs {
  std::string data;
  std::string config;
  std::vector<std::string> overrides;
  std::string lrs = "1e-4,1e-3";
  std::string wds = "1e-3,1e-2";
  std::string seeds = "0-4";
  std::string out = "out/grid";
};

int cmd_grid(const GridArgs& a) {
  const ExperimentConfig config = load_experiment_config(a.config, a.overrides);
  const Split split = load_split(a.data);
  const auto seeds = parse_seeds(a.seeds);
  const GridSpec spec{parse_doubles(a.lrs), parse_doubles(a.wds)};
  const GridResult grid = grid_search(spec, config.train, split.train, split.test, seeds);
  const std::string variant = variant_name(config.train.model.variant);
  std::string lines;
  std::string text = pad("lr", 10) + pad("wd", 10) + pad("test bal. acc.", 18) + "test AUROC\n";
  for (const auto& cell : grid.cells) {
    for (const auto& run : cell.summary.runs) {
      json line = metrics_record(variant, run.report.seed, "test", run.report.test, config.train.epochs,
                                 run.report.wall_time_s);
      line["lr"] = cell.lr;
      line["weight_decay"] = cell.weight_decay;
      lines += line.dump() + "\n";
    }
    char lr[16], wd[16];
    std::snprintf(lr, sizeof lr, "%g", cell.lr);
    std::snprintf(wd, sizeof wd, "%g", cell.weight_decay);
    text += pad(lr, 10) + pad(wd, 10) + pad(fmt_stat(cell.summary.test_balanced_accuracy), 18) +
            fmt_stat(cell.summary.test_auroc) + "\n";
  }
  const auto& best = grid.cells[grid.best];
  char buf[96];
  std::snprintf(buf, sizeof buf, "best: lr=%g weight_decay=%g\n", best.lr, best.weight_decay);
  text += buf;
  const fs::path out = a.out;
  write_text(out / "grid.jsonl", lines);
  write_text(out / "grid.txt", text);
  std::cout << text;
  return kOk;
}

int run_guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputMissing;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataCorrupt;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckpointMismatch;
  } catch (const UnsupportedVariant& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnsupported;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distance-aware self-attention for multiple instance learning"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate train/test bag files and a manifest");
  gen_cmd->add_option("--mnist-dir", gen.mnist_dir, "Directory with MNIST IDX files")->capture_default_str();
  gen_cmd->add_option("--config", gen.config, "JSON config file");
  gen_cmd->add_option("--set", gen.overrides, "Config override key=value (repeatable)");
  gen_cmd->add_option("--out", gen.out, "Output directory")->capture_default_str();
  gen_cmd->add_flag("--inverted", gen.inverted, "Label bags by long-range pairs");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train one variant over several seeds");
  train_cmd->add_option("--data", train.data, "Directory with train.bags and test.bags")->required();
  train_cmd->add_option("--config", train.config, "JSON config file");
  train_cmd->add_option("--set", train.overrides, "Config override key=value (repeatable)");
  train_cmd->add_option("--variant", train.variant, "max-pool, abmil, vanilla-sa, discrete-rel-sa or das-mil");
  train_cmd->add_option("--seeds", train.seeds, "Seeds, e.g. 0,1,2 or 0-4")->capture_default_str();
  train_cmd->add_option("--out", train.out, "Output directory")->capture_default_str();

  std::string eval_ckpt, eval_data;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on both splits");
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "Directory with train.bags and test.bags")->required();

  ExportArgs exp;
  auto* exp_cmd = app.add_subcommand("export-attention", "Write the attention matrix of one bag");
  exp_cmd->add_option("--checkpoint", exp.checkpoint, "Checkpoint file")->required();
  exp_cmd->add_option("--data", exp.data, "Directory with train.bags and test.bags")->required();
  exp_cmd->add_option("--split", exp.split, "train or test")->capture_default_str();
  exp_cmd->add_option("--bag-index", exp.bag_index, "Bag index within the split")->capture_default_str();
  exp_cmd->add_option("--format", exp.format, "csv or pgm")->capture_default_str();
  exp_cmd->add_option("--out", exp.out, "Output file");

  AblateArgs abl;
  auto* abl_cmd = app.add_subcommand("ablate", "Run the embedding ablation table");
  abl_cmd->add_option("--data", abl.data, "One or more data directories")->required();
  abl_cmd->add_option("--config", abl.config, "JSON config file");
  abl_cmd->add_option("--set", abl.overrides, "Config override key=value (repeatable)");
  abl_cmd->add_option("--seeds", abl.seeds, "Seeds")->capture_default_str();
  abl_cmd->add_option("--out", abl.out, "Output directory")->capture_default_str();

  GridArgs grid;
  auto* grid_cmd = app.add_subcommand("grid", "Grid search over learning rate and weight decay");
  grid_cmd->add_option("--data", grid.data, "Directory with train.bags and test.bags")->required();
  grid_cmd->add_option("--config", grid.config, "JSON config file");
  grid_cmd->add_option("--set", grid.overrides, "Config override key=value (repeatable)");
  grid_cmd->add_option("--lrs", grid.lrs, "Comma-separated learning rates")->capture_default_str();
  grid_cmd->add_option("--wds", grid.wds, "Comma-separated weight decays")->capture_default_str();
  grid_cmd->add_option("--seeds", grid.seeds, "Seeds")->capture_default_str();
  grid_cmd->add_option("--out", grid.out, "Output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (gen_cmd->parsed()) return run_guarded([&] { return cmd_gen_data(gen); });
  if (train_cmd->parsed()) return run_guarded([&] { return cmd_train(train); });
  if (eval_cmd->parsed()) return run_guarded([&] { return cmd_eval(eval_ckpt, eval_data); });
  if (exp_cmd->parsed()) return run_guarded([&] { return cmd_export_attention(exp); });
  if (abl_cmd->parsed()) return run_guarded([&] { return cmd_ablate(abl); });
  if (grid_cmd->parsed()) return run_guarded([&] { return cmd_grid(grid); });
  return kFailure;
}
