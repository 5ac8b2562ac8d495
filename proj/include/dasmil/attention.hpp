#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dasmil/autodiff.hpp"
#include "dasmil/ops.hpp"
#include "dasmil/rng.hpp"

namespace dasmil {

/// Which relative-distance bias terms take part in attention.
struct RoleFlags {
  bool key = true;
  bool query = true;
  bool value = true;

  bool any() const { return key || query || value; }
  bool operator==(const RoleFlags&) const = default;
};

enum class PhiKind {
  /// phi(d) = sigmoid(beta * d / scale + theta)
  Sigmoid,
  /// phi(d) = d / scale; beta and theta are unused
  Identity,
};

/// Weight initialisation: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor uniform_fan_in(std::size_t rows, std::size_t cols, Rng& rng);

/// Query/key/value projections, each d_x x d_z.
struct SelfAttentionParams {
  Parameter wq, wk, wv;

  static SelfAttentionParams init(std::size_t d_x, std::size_t d_z, Rng& rng, const std::string& prefix);
  std::size_t d_x() const { return wq.value.dim(0); }
  std::size_t d_z() const { return wq.value.dim(1); }
  ParameterList parameters();
};

struct DasAttParams {
  SelfAttentionParams proj;
  /// Interpolation endpoints, each 1 x d_z.
  Parameter u_key, v_key, u_query, v_query, u_value, v_value;
  /// Shared by all three roles, each 1 x 1.
  Parameter beta, theta;
  RoleFlags roles;
  bool subtract_product = true;
  PhiKind phi = PhiKind::Sigmoid;
  /// Distances are divided by this before entering phi.
  double distance_scale = 1.0;

  /// beta = 10, theta = -5, endpoints ~ Normal(0, 0.02^2).
  static DasAttParams init(std::size_t d_x, std::size_t d_z, double distance_scale, Rng& rng,
                           const std::string& prefix = "dasatt");
  std::size_t d_z() const { return proj.d_z(); }
  /// Projections, endpoints of enabled roles, and beta/theta when phi is a sigmoid.
  ParameterList parameters();
  void set_embeddings_trainable(bool trainable);
};

struct DiscreteRelParams {
  SelfAttentionParams proj;
  /// k + 1 strictly increasing bin edges.
  std::vector<double> edges;
  /// One row per bin, each k x d_z.
  Parameter r_key, r_query, r_value;
  RoleFlags roles;

  /// `bins` equal-width bins over [0, max_distance].
  static DiscreteRelParams init(std::size_t d_x, std::size_t d_z, std::size_t bins, double max_distance, Rng& rng,
                                const std::string& prefix = "discrete");
  std::size_t bins() const { return edges.size() - 1; }
  ParameterList parameters();
};

struct AbmilParams {
  Parameter v;  // d_z x h
  Parameter w;  // h x 1

  static AbmilParams init(std::size_t d_z, std::size_t hidden, Rng& rng, const std::string& prefix = "abmil");
  ParameterList parameters();
};

struct AttentionResult {
  Var z;
  /// n x n row-stochastic attention matrix (1 x n for AB-MIL pooling).
  Var alpha;
};

// Scalar helpers -------------------------------------------------------------

double phi(double normalized_distance, double beta, double theta);

/// b = phi * u + (1 - phi) * v with phi = phi(normalized_distance, beta, theta).
Tensor bias_vector(double normalized_distance, const Tensor& u, const Tensor& v, double beta, double theta);

// Operators --------------------------------------------------------------------

/// n x n interpolation coefficients phi(delta_ij) for the given params.
Var interpolation_weights(Tape& tape, const Tensor& distances, DasAttParams& p);

/// Compatibilities built from explicit per-pair bias vectors:
/// e_ij = [(q_i + bQ_ij)(k_j + bK_ij)^T - bQ_ij bK_ij^T] / sqrt(d_z), where the
/// last term is only present when `subtract_product` is set. O(n^2 d_z).
Var compat_expanded(Var x, const Tensor& distances, DasAttParams& p);

/// Same values as compat_expanded using A = (XWQ)(XWK)^T once and the
/// interpolation structure for the cross terms:
///   q_i . bK_ij = phi_ij (q_i . uK) + (1 - phi_ij)(q_i . vK)
/// so the bias work is O(n d_z) plus O(n^2) combination.
Var compat_efficient(Var x, const Tensor& distances, DasAttParams& p);

/// z_i = sum_j alpha_ij (x_j WV + bV_ij) with alpha = softmax_rows(compat_efficient).
AttentionResult das_att(Var x, const Tensor& distances, DasAttParams& p);

/// Single-head scaled dot-product self-attention.
AttentionResult vanilla_sa(Var x, SelfAttentionParams& p);

/// Index of the half-open bin [edge_b, edge_b+1) holding `distance`, clamped
/// to the first and last bin.
std::size_t bin_of(double distance, std::span<const double> edges);
BinIndex assign_bins(const Tensor& distances, std::span<const double> edges);

/// Relative self-attention with one learned bias vector per distance bin.
AttentionResult discrete_rel_sa(Var x, const Tensor& distances, DiscreteRelParams& p);

/// a_i = w^T tanh(V^T z_i), alpha = softmax(a), pooled = sum_i alpha_i z_i.
/// Returns pooled as 1 x d_z and alpha as 1 x n.
AttentionResult abmil_pool(Var z, AbmilParams& p);

}  // namespace dasmil
