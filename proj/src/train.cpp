#include "dasmil/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "dasmil/errors.hpp"

namespace dasmil {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kShuffleStream = 0x5F;
constexpr std::uint64_t kDropoutStream = 0xD0;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be non-negative");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"optimizer", "adamw"},
          {"seed", c.seed},
          {"track_best_epoch", c.track_best_epoch},
          {"model", to_json(c.model)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.track_best_epoch = j.value("track_best_epoch", true);
  c.model = model_config_from_json(j.at("model"));
  return c;
}

nlohmann::json RunReport::deterministic_json() const {
  return {{"seed", seed},
          {"config", config},
          {"positive_weight", positive_weight},
          {"epoch_loss", epoch_loss},
          {"epoch_test_balanced_accuracy", epoch_test_balanced_accuracy},
          {"best_epoch", best_epoch},
          {"best_test_balanced_accuracy", best_test_balanced_accuracy},
          {"train", dasmil::to_json(train, true)},
          {"test", dasmil::to_json(test, true)}};
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json j = deterministic_json();
  j["wall_time_s"] = wall_time_s;
  return j;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t count) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(seed, {kShuffleStream, epoch});
  rng.shuffle(order);
  return order;
}

double positive_class_weight(std::span<const Bag> bags) {
  std::size_t pos = 0;
  for (const Bag& b : bags) pos += b.label == 1;
  if (pos == 0 || pos == bags.size()) throw PreconditionError("training split needs both classes");
  return static_cast<double>(bags.size() - pos) / static_cast<double>(pos);
}

TrainOutcome train_model(const TrainConfig& config, std::span<const Bag> train, std::span<const Bag> test,
                         const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty() || test.empty()) throw PreconditionError("training needs non-empty train and test splits");
  const auto start = std::chrono::steady_clock::now();

  Rng init = Rng::derive(config.seed, {kInitStream});
  const double diagonal = std::hypot(train[0].canvas_width, train[0].canvas_height);
  TrainOutcome out{MilModel(config.model, diagonal, init), {}};
  MilModel& model = out.model;
  RunReport& report = out.report;
  report.seed = config.seed;
  report.config = to_json(config);
  report.config["model"] = to_json(model.config());
  report.positive_weight = positive_class_weight(train);

  AdamW optimizer({.lr = config.lr, .weight_decay = config.weight_decay});
  const ParameterList params = model.parameters();
  report.best_test_balanced_accuracy = -1.0;
  const auto test_labels = bag_labels(test);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng dropout_rng = Rng::derive(config.seed, {kDropoutStream, epoch});
    double total = 0.0;
    for (std::size_t idx : epoch_order(config.seed, epoch, train.size())) {
      const Bag& bag = train[idx];
      const std::string where = "epoch " + std::to_string(epoch) + ", bag " + std::to_string(idx);
      Tape tape;
      double value = 0.0;
      try {
        ForwardResult fwd = model.forward(tape, bag, Mode::Train, dropout_rng);
        Var loss = weighted_bce(fwd.score, bag.label, report.positive_weight);
        value = loss.value().item();
        if (!std::isfinite(value)) throw TrainingError("non-finite loss at " + where);
        tape.backward(loss);
      } catch (const NumericError& e) {
        throw TrainingError("training diverged at " + where + ": " + e.what());
      }
      optimizer.step(params);
      for (const Parameter* p : params)
        if (!p->value.all_finite()) throw TrainingError("parameter " + p->name + " became non-finite at " + where);
      total += value;
    }
    const double mean = total / static_cast<double>(train.size());
    report.epoch_loss.push_back(mean);
    if (config.track_best_epoch) {
      const double bacc = evaluate(model, test).balanced_accuracy;
      report.epoch_test_balanced_accuracy.push_back(bacc);
      if (bacc > report.best_test_balanced_accuracy) {
        report.best_test_balanced_accuracy = bacc;
        report.best_epoch = epoch;
      }
    }
    if (on_epoch) on_epoch(epoch, mean);
  }

  report.train = evaluate(model, train);
  report.test = evaluate(model, test);
  if (!config.track_best_epoch) {
    report.best_epoch = config.epochs - 1;
    report.best_test_balanced_accuracy = report.test.balanced_accuracy;
  }
  report.wall_time_s = seconds_since(start);
  return out;
}

Stat summarize(std::span<const double> values) {
  Stat s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  // Centring on the first value keeps constant inputs exact.
  const double first = values.front();
  double shift = 0.0;
  for (double v : values) shift += v - first;
  s.mean = first + shift / n;
  if (values.size() < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / (n - 1.0));
  return s;
}

SeedSummary summarize_runs(std::vector<TrainOutcome> runs) {
  SeedSummary s;
  std::vector<double> train_bacc, test_bacc, test_auc, best_bacc;
  for (const auto& r : runs) {
    train_bacc.push_back(r.report.train.balanced_accuracy);
    test_bacc.push_back(r.report.test.balanced_accuracy);
    test_auc.push_back(r.report.test.auroc);
    best_bacc.push_back(r.report.best_test_balanced_accuracy);
  }
  s.train_balanced_accuracy = summarize(train_bacc);
  s.test_balanced_accuracy = summarize(test_bacc);
  s.test_auroc = summarize(test_auc);
  s.best_epoch_test_balanced_accuracy = summarize(best_bacc);
  s.best_run_test_balanced_accuracy = test_bacc.empty() ? 0.0 : *std::max_element(test_bacc.begin(), test_bacc.end());
  s.runs = std::move(runs);
  return s;
}

nlohmann::json SeedSummary::to_json() const {
  auto stat = [](const Stat& st) { return nlohmann::json{{"mean", st.mean}, {"std", st.std}}; };
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& r : runs) seeds.push_back(r.report.seed);
  return {{"seeds", seeds},
          {"train_balanced_accuracy", stat(train_balanced_accuracy)},
          {"test_balanced_accuracy", stat(test_balanced_accuracy)},
          {"test_auroc", stat(test_auroc)},
          {"best_epoch_test_balanced_accuracy", stat(best_epoch_test_balanced_accuracy)},
          {"best_run_test_balanced_accuracy", best_run_test_balanced_accuracy}};
}

std::size_t worker_count() {
  if (const char* env = std::getenv("DASMIL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    throw ConfigError(std::string("DASMIL_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = worker_count();
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < threads; ++t)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = count;
        }
      }
    });
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

namespace {

/// Trains every (config, seed) pair; result[c][s].
std::vector<std::vector<TrainOutcome>> train_jobs(const std::vector<TrainConfig>& configs,
                                                  std::span<const Bag> train, std::span<const Bag> test,
                                                  std::span<const std::uint64_t> seeds, std::size_t threads) {
  std::vector<std::vector<TrainOutcome>> out(configs.size(), std::vector<TrainOutcome>(seeds.size()));
  parallel_for(configs.size() * seeds.size(), threads, [&](std::size_t job) {
    const std::size_t c = job / seeds.size();
    const std::size_t s = job % seeds.size();
    TrainConfig cfg = configs[c];
    cfg.seed = seeds[s];
    out[c][s] = train_model(cfg, train, test);
  });
  return out;
}

}  // namespace

SeedSummary run_seeds(const TrainConfig& config, std::span<const Bag> train, std::span<const Bag> test,
                      std::span<const std::uint64_t> seeds, std::size_t threads) {
  if (seeds.empty()) throw PreconditionError("run_seeds needs at least one seed");
  auto runs = train_jobs({config}, train, test, seeds, threads);
  return summarize_runs(std::move(runs[0]));
}

GridResult grid_search(const GridSpec& grid, const TrainConfig& base, std::span<const Bag> train,
                       std::span<const Bag> test, std::span<const std::uint64_t> seeds, std::size_t threads) {
  if (grid.lrs.empty() || grid.weight_decays.empty()) throw PreconditionError("grid must not be empty");
  if (seeds.empty()) throw PreconditionError("grid search needs at least one seed");
  std::vector<TrainConfig> configs;
  for (double lr : grid.lrs)
    for (double wd : grid.weight_decays) {
      TrainConfig c = base;
      c.lr = lr;
      c.weight_decay = wd;
      configs.push_back(c);
    }
  auto runs = train_jobs(configs, train, test, seeds, threads);

  GridResult result;
  for (std::size_t i = 0; i < configs.size(); ++i)
    result.cells.push_back({configs[i].lr, configs[i].weight_decay, summarize_runs(std::move(runs[i]))});
  for (std::size_t i = 1; i < result.cells.size(); ++i) {
    const GridCell& a = result.cells[i];
    const GridCell& b = result.cells[result.best];
    const double ma = a.summary.test_balanced_accuracy.mean;
    const double mb = b.summary.test_balanced_accuracy.mean;
    if (ma > mb || (ma == mb && (a.lr < b.lr || (a.lr == b.lr && a.weight_decay < b.weight_decay))))
      result.best = i;
  }
  return result;
}

std::vector<std::pair<std::string, ModelConfig>> ablation_configs(const ModelConfig& base) {
  auto make = [&](bool k, bool q, bool v, bool subtract = true) {
    ModelConfig c = base;
    c.variant = Variant::DasMil;
    c.roles = RoleFlags{k, q, v};
    c.subtract_product = subtract;
    c.freeze_embeddings = false;
    c.phi = PhiKind::Sigmoid;
    return c;
  };
  ModelConfig frozen = make(true, true, true);
  frozen.freeze_embeddings = true;
  ModelConfig identity = make(true, true, true);
  identity.phi = PhiKind::Identity;
  return {
      {"K", make(true, false, false)},
      {"Q", make(false, true, false)},
      {"V", make(false, false, true)},
      {"K,Q +product", make(true, true, false, false)},
      {"K,Q", make(true, true, false)},
      {"K,V", make(true, false, true)},
      {"Q,V", make(false, true, true)},
      {"K,Q,V +product", make(true, true, true, false)},
      {"K,Q,V frozen", frozen},
      {"K,Q,V identity-phi", identity},
      {"K,Q,V", make(true, true, true)},
  };
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, std::span<const Bag> train, std::span<const Bag> test,
                                      std::span<const std::uint64_t> seeds, std::size_t threads) {
  if (seeds.empty()) throw PreconditionError("ablation needs at least one seed");
  const auto rows = ablation_configs(base.model);
  std::vector<TrainConfig> configs;
  for (const auto& [name, model] : rows) {
    TrainConfig c = base;
    c.model = model;
    configs.push_back(c);
  }
  auto runs = train_jobs(configs, train, test, seeds, threads);
  std::vector<AblationRow> out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.push_back({rows[i].first, rows[i].second, summarize_runs(std::move(runs[i]))});
  return out;
}

}  // namespace dasmil
