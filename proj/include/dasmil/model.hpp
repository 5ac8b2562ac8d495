#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "json.hpp"

#include "dasmil/attention.hpp"
#include "dasmil/dataset.hpp"

namespace dasmil {

enum class Variant { MaxPool, Abmil, VanillaSa, DiscreteRelSa, DasMil };

std::string variant_name(Variant v);
/// Accepts "max-pool", "abmil", "vanilla-sa", "discrete-rel-sa", "das-mil".
Variant parse_variant(const std::string& name);
bool variant_has_attention_matrix(Variant v);

/// conv(c1, k) -> relu -> pool -> dropout -> conv(c2, k) -> relu -> pool ->
/// flatten -> dropout -> linear(d_z) -> relu. The defaults give the 28x28
/// pipeline 28 -> 24x10 -> 12x10 -> 8x20 -> 4x20 -> 320 -> 32.
struct ExtractorConfig {
  std::size_t patch_side = 28;
  std::size_t conv1_channels = 10;
  std::size_t conv2_channels = 20;
  std::size_t conv1_kernel = 5;
  std::size_t conv2_kernel = 5;
  std::size_t pool = 2;
  std::size_t d_z = 32;
  double dropout1 = 0.1;
  double dropout2 = 0.5;

  std::size_t flat_features() const;
  bool operator==(const ExtractorConfig&) const = default;
};

struct ModelConfig {
  Variant variant = Variant::DasMil;
  ExtractorConfig extractor;
  RoleFlags roles;
  bool subtract_product = true;
  PhiKind phi = PhiKind::Sigmoid;
  bool freeze_embeddings = false;
  /// Divides distances before phi; 0 means "use the bag's canvas diagonal".
  double distance_scale = 0.0;
  std::size_t discrete_bins = 10;
  /// Upper edge of the discrete bins; 0 means "use the canvas diagonal".
  double discrete_max_distance = 0.0;
  std::size_t abmil_hidden = 15;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct FeatureExtractor {
  ExtractorConfig config;
  Parameter conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b;

  static FeatureExtractor init(const ExtractorConfig& config, Rng& rng);
  ParameterList parameters();
};

/// n patches (n x side x side, values in [0,1]) -> n x d_z features.
Var extract_features(Var patches, FeatureExtractor& fe, Mode mode, Rng& rng);

struct ForwardResult {
  /// Bag score S in (0, 1), shape {1}.
  Var score;
  /// Attention matrix when the variant has one.
  std::optional<Tensor> attention;
};

/// Full MIL scorer. Value type: copying a model copies its parameters.
class MilModel {
 public:
  MilModel() = default;
  MilModel(const ModelConfig& config, double canvas_diagonal, Rng& rng);

  const ModelConfig& config() const { return config_; }
  ParameterList parameters();
  std::size_t parameter_count();

  ForwardResult forward(Tape& tape, const Bag& bag, Mode mode, Rng& rng);
  /// Eval-mode score without keeping the tape.
  double score(const Bag& bag);

  FeatureExtractor& extractor() { return extractor_; }
  DasAttParams& das() { return das_; }
  SelfAttentionParams& sa() { return sa_; }
  DiscreteRelParams& discrete() { return discrete_; }
  AbmilParams& abmil() { return abmil_; }
  Parameter& scorer_w() { return scorer_w_; }
  Parameter& scorer_b() { return scorer_b_; }

  /// Features -> aggregate -> max over instances -> sigmoid(z w + b).
  ForwardResult forward_features(Var features, const Tensor& distances);

  nlohmann::json metadata() const;

 private:
  ModelConfig config_;
  double distance_scale_ = 1.0;
  FeatureExtractor extractor_;
  DasAttParams das_;
  SelfAttentionParams sa_;
  DiscreteRelParams discrete_;
  AbmilParams abmil_;
  Parameter scorer_w_, scorer_b_;
};

/// Bag patches as an n x 1 x side x side tensor.
Tensor bag_patches(const Bag& bag);

/// L = -w Y log S - (1 - Y) log(1 - S), with S clamped to [1e-7, 1 - 1e-7].
Var weighted_bce(Var score, int label, double positive_weight);

}  // namespace dasmil
