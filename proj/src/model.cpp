#include "dasmil/model.hpp"

#include <algorithm>
#include <cmath>

#include "dasmil/errors.hpp"

namespace dasmil {

namespace {

constexpr double kProbabilityFloor = 1e-7;

const std::pair<Variant, const char*> kVariantNames[] = {
    {Variant::MaxPool, "max-pool"},
    {Variant::Abmil, "abmil"},
    {Variant::VanillaSa, "vanilla-sa"},
    {Variant::DiscreteRelSa, "discrete-rel-sa"},
    {Variant::DasMil, "das-mil"},
};

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride) {
  if (k > in) throw ConfigError("extractor layer window larger than its input");
  return (in - k) / stride + 1;
}

Tensor conv_kernels(std::size_t out, std::size_t in, std::size_t k, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  Tensor t({out, in, k, k});
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

std::string variant_name(Variant v) {
  for (const auto& [variant, name] : kVariantNames)
    if (variant == v) return name;
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (const auto& [variant, n] : kVariantNames)
    if (name == n) return variant;
  throw ConfigError("unknown variant '" + name + "'");
}

bool variant_has_attention_matrix(Variant v) {
  return v == Variant::VanillaSa || v == Variant::DiscreteRelSa || v == Variant::DasMil;
}

std::size_t ExtractorConfig::flat_features() const {
  std::size_t s = conv_out(patch_side, conv1_kernel, 1);
  s = conv_out(s, pool, pool);
  s = conv_out(s, conv2_kernel, 1);
  s = conv_out(s, pool, pool);
  return conv2_channels * s * s;
}

nlohmann::json to_json(const ModelConfig& c) {
  const auto& e = c.extractor;
  return {
      {"variant", variant_name(c.variant)},
      {"extractor",
       {{"patch_side", e.patch_side},
        {"conv1_channels", e.conv1_channels},
        {"conv2_channels", e.conv2_channels},
        {"conv1_kernel", e.conv1_kernel},
        {"conv2_kernel", e.conv2_kernel},
        {"pool", e.pool},
        {"d_z", e.d_z},
        {"dropout1", e.dropout1},
        {"dropout2", e.dropout2}}},
      {"roles", {{"key", c.roles.key}, {"query", c.roles.query}, {"value", c.roles.value}}},
      {"subtract_product", c.subtract_product},
      {"identity_phi", c.phi == PhiKind::Identity},
      {"freeze_embeddings", c.freeze_embeddings},
      {"distance_scale", c.distance_scale},
      {"discrete_bins", c.discrete_bins},
      {"discrete_max_distance", c.discrete_max_distance},
      {"abmil_hidden", c.abmil_hidden},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  const auto& e = j.at("extractor");
  c.extractor.patch_side = e.at("patch_side").get<std::size_t>();
  c.extractor.conv1_channels = e.at("conv1_channels").get<std::size_t>();
  c.extractor.conv2_channels = e.at("conv2_channels").get<std::size_t>();
  c.extractor.conv1_kernel = e.at("conv1_kernel").get<std::size_t>();
  c.extractor.conv2_kernel = e.at("conv2_kernel").get<std::size_t>();
  c.extractor.pool = e.at("pool").get<std::size_t>();
  c.extractor.d_z = e.at("d_z").get<std::size_t>();
  c.extractor.dropout1 = e.at("dropout1").get<double>();
  c.extractor.dropout2 = e.at("dropout2").get<double>();
  const auto& r = j.at("roles");
  c.roles = RoleFlags{r.at("key").get<bool>(), r.at("query").get<bool>(), r.at("value").get<bool>()};
  c.subtract_product = j.at("subtract_product").get<bool>();
  c.phi = j.at("identity_phi").get<bool>() ? PhiKind::Identity : PhiKind::Sigmoid;
  c.freeze_embeddings = j.at("freeze_embeddings").get<bool>();
  c.distance_scale = j.at("distance_scale").get<double>();
  c.discrete_bins = j.at("discrete_bins").get<std::size_t>();
  c.discrete_max_distance = j.at("discrete_max_distance").get<double>();
  c.abmil_hidden = j.at("abmil_hidden").get<std::size_t>();
  return c;
}

FeatureExtractor FeatureExtractor::init(const ExtractorConfig& config, Rng& rng) {
  FeatureExtractor fe;
  fe.config = config;
  const std::size_t flat = config.flat_features();
  fe.conv1_w = Parameter("extractor.conv1.weight", conv_kernels(config.conv1_channels, 1, config.conv1_kernel, rng));
  fe.conv1_b = Parameter("extractor.conv1.bias", Tensor({config.conv1_channels}, 0.0));
  fe.conv2_w = Parameter("extractor.conv2.weight",
                         conv_kernels(config.conv2_channels, config.conv1_channels, config.conv2_kernel, rng));
  fe.conv2_b = Parameter("extractor.conv2.bias", Tensor({config.conv2_channels}, 0.0));
  fe.fc_w = Parameter("extractor.fc.weight", uniform_fan_in(flat, config.d_z, rng));
  fe.fc_b = Parameter("extractor.fc.bias", Tensor({1, config.d_z}, 0.0));
  return fe;
}

ParameterList FeatureExtractor::parameters() { return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc_w, &fc_b}; }

Var extract_features(Var patches, FeatureExtractor& fe, Mode mode, Rng& rng) {
  const auto& c = fe.config;
  Shape s = patches.shape();
  if (s.size() == 3) {
    patches = reshape(patches, {s[0], 1, s[1], s[2]});
    s = patches.shape();
  }
  if (s.size() != 4 || s[1] != 1 || s[2] != c.patch_side || s[3] != c.patch_side)
    throw DimensionError("extract_features expects n x " + std::to_string(c.patch_side) + " x " +
                         std::to_string(c.patch_side) + " patches, got " + shape_string(s));
  const std::size_t n = s[0];
  Tape& tape = patches.tape();

  Var h = relu(conv2d(patches, tape.param(fe.conv1_w), tape.param(fe.conv1_b)));
  h = dropout(maxpool2d(h, c.pool, c.pool), c.dropout1, mode, rng);
  h = relu(conv2d(h, tape.param(fe.conv2_w), tape.param(fe.conv2_b)));
  h = maxpool2d(h, c.pool, c.pool);
  h = dropout(reshape(h, {n, c.flat_features()}), c.dropout2, mode, rng);
  return relu(add(matmul(h, tape.param(fe.fc_w)), tape.param(fe.fc_b)));
}

MilModel::MilModel(const ModelConfig& config, double canvas_diagonal, Rng& rng) : config_(config) {
  distance_scale_ = config.distance_scale > 0.0 ? config.distance_scale : canvas_diagonal;
  if (!(distance_scale_ > 0.0)) throw ConfigError("distance scale must be positive");
  config_.distance_scale = distance_scale_;
  if (config_.discrete_max_distance <= 0.0) config_.discrete_max_distance = canvas_diagonal;

  // Separate streams keep the extractor initialisation identical across variants.
  const std::uint64_t base = rng.next_u64();
  Rng extractor_rng = Rng::derive(base, {1});
  Rng aggregator_rng = Rng::derive(base, {2});
  Rng scorer_rng = Rng::derive(base, {3});

  extractor_ = FeatureExtractor::init(config_.extractor, extractor_rng);
  const std::size_t dz = config_.extractor.d_z;
  switch (config_.variant) {
    case Variant::MaxPool: break;
    case Variant::Abmil: abmil_ = AbmilParams::init(dz, config_.abmil_hidden, aggregator_rng); break;
    case Variant::VanillaSa: sa_ = SelfAttentionParams::init(dz, dz, aggregator_rng, "sa"); break;
    case Variant::DiscreteRelSa:
      discrete_ = DiscreteRelParams::init(dz, dz, config_.discrete_bins, config_.discrete_max_distance, aggregator_rng);
      discrete_.roles = config_.roles;
      break;
    case Variant::DasMil:
      das_ = DasAttParams::init(dz, dz, distance_scale_, aggregator_rng);
      das_.roles = config_.roles;
      das_.subtract_product = config_.subtract_product;
      das_.phi = config_.phi;
      das_.set_embeddings_trainable(!config_.freeze_embeddings);
      break;
  }
  scorer_w_ = Parameter("scorer.w", uniform_fan_in(dz, 1, scorer_rng));
  scorer_b_ = Parameter("scorer.b", Tensor({1, 1}, 0.0));
}

ParameterList MilModel::parameters() {
  ParameterList out = extractor_.parameters();
  ParameterList agg;
  switch (config_.variant) {
    case Variant::MaxPool: break;
    case Variant::Abmil: agg = abmil_.parameters(); break;
    case Variant::VanillaSa: agg = sa_.parameters(); break;
    case Variant::DiscreteRelSa: agg = discrete_.parameters(); break;
    case Variant::DasMil: agg = das_.parameters(); break;
  }
  out.insert(out.end(), agg.begin(), agg.end());
  out.insert(out.end(), {&scorer_w_, &scorer_b_});
  return out;
}

std::size_t MilModel::parameter_count() {
  std::size_t total = 0;
  for (const Parameter* p : parameters()) total += p->value.size();
  return total;
}

ForwardResult MilModel::forward_features(Var features, const Tensor& distances) {
  Tape& tape = features.tape();
  ForwardResult result;
  Var aggregated = features;
  switch (config_.variant) {
    case Variant::MaxPool: break;
    case Variant::Abmil: aggregated = abmil_pool(features, abmil_).z; break;
    case Variant::VanillaSa: {
      auto r = vanilla_sa(features, sa_);
      aggregated = r.z;
      result.attention = r.alpha.value();
      break;
    }
    case Variant::DiscreteRelSa: {
      auto r = discrete_rel_sa(features, distances, discrete_);
      aggregated = r.z;
      result.attention = r.alpha.value();
      break;
    }
    case Variant::DasMil: {
      auto r = das_att(features, distances, das_);
      aggregated = r.z;
      result.attention = r.alpha.value();
      break;
    }
  }
  Var pooled = reshape(max_over_instances(aggregated), {1, config_.extractor.d_z});
  Var logit = add(matmul(pooled, tape.param(scorer_w_)), tape.param(scorer_b_));
  result.score = reshape(sigmoid(logit), {1});
  return result;
}

ForwardResult MilModel::forward(Tape& tape, const Bag& bag, Mode mode, Rng& rng) {
  if (bag.instances.empty()) throw PreconditionError("cannot score an empty bag");
  Var features = extract_features(tape.constant(bag_patches(bag)), extractor_, mode, rng);
  const std::vector<Point> centroids = bag.centroids();
  return forward_features(features, distance_matrix(centroids));
}

double MilModel::score(const Bag& bag) {
  Tape tape;
  Rng unused(0);
  return forward(tape, bag, Mode::Eval, unused).score.value().item();
}

nlohmann::json MilModel::metadata() const { return {{"model", to_json(config_)}}; }

Tensor bag_patches(const Bag& bag) {
  const std::size_t n = bag.instances.size();
  Tensor t({n, 1, kDigitSide, kDigitSide});
  auto out = t.data();
  for (std::size_t i = 0; i < n; ++i)
    std::copy(bag.instances[i].patch.begin(), bag.instances[i].patch.end(),
              out.begin() + static_cast<std::ptrdiff_t>(i * kDigitPixels));
  return t;
}

Var weighted_bce(Var score, int label, double positive_weight) {
  Var s = clamp(score, kProbabilityFloor, 1.0 - kProbabilityFloor);
  if (label == 1) return scale(sum(log(s)), -positive_weight);
  return scale(sum(log(one_minus(s))), -1.0);
}

}  // namespace dasmil
