#include "dasmil/attention.hpp"

#include <algorithm>
#include <cmath>

#include "dasmil/errors.hpp"

namespace dasmil {

namespace {

constexpr double kEndpointStd = 0.02;

Tensor normal_row(std::size_t n, double stddev, Rng& rng) {
  Tensor t({1, n});
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

Tensor normal_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t({rows, cols});
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

void check_inputs(Var x, const Tensor& distances, std::size_t d_x) {
  if (x.value().rank() != 2) throw DimensionError("attention input must be n x d_x, got " + shape_string(x.shape()));
  if (x.dim(1) != d_x)
    throw DimensionError("attention input has " + std::to_string(x.dim(1)) + " features, projections expect " +
                         std::to_string(d_x));
  const std::size_t n = x.dim(0);
  if (distances.shape() != Shape{n, n})
    throw DimensionError("distance matrix " + shape_string(distances.shape()) + " does not match " +
                         std::to_string(n) + " instances");
}

struct Projections {
  Var q, k, v;
};

Projections project(Var x, SelfAttentionParams& p) {
  Tape& tape = x.tape();
  return {matmul(x, tape.param(p.wq)), matmul(x, tape.param(p.wk)), matmul(x, tape.param(p.wv))};
}

double inv_sqrt(std::size_t d) { return 1.0 / std::sqrt(static_cast<double>(d)); }

// Pairs in row-major order: (0,0), (0,1), ..., (n-1,n-1).
void pair_indices(std::size_t n, std::vector<std::size_t>& rows, std::vector<std::size_t>& cols) {
  rows.resize(n * n);
  cols.resize(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      rows[i * n + j] = i;
      cols[i * n + j] = j;
    }
}

// Row-vector dot product of an n x d matrix with a 1 x d parameter: n x 1.
Var dot_rows(Var m, Parameter& row) { return matmul(m, transpose(m.tape().param(row))); }

Var compat_from_projections(const Projections& pr, Var phi_w, Var phi_c, DasAttParams& p) {
  Tape& tape = pr.q.tape();
  Var e = matmul(pr.q, transpose(pr.k));
  if (p.roles.key) {
    // q_i . bK_ij, broadcast along j.
    Var cross = add(mul(phi_w, dot_rows(pr.q, p.u_key)), mul(phi_c, dot_rows(pr.q, p.v_key)));
    e = add(e, cross);
  }
  if (p.roles.query) {
    // k_j . bQ_ij, broadcast along i.
    Var cross = add(mul(phi_w, transpose(dot_rows(pr.k, p.u_query))),
                    mul(phi_c, transpose(dot_rows(pr.k, p.v_query))));
    e = add(e, cross);
  }
  if (!p.subtract_product && p.roles.key && p.roles.query) {
    Var uq = tape.param(p.u_query), vq = tape.param(p.v_query);
    Var uk = tape.param(p.u_key), vk = tape.param(p.v_key);
    Var uu = matmul(uq, transpose(uk));
    Var mixed = add(matmul(uq, transpose(vk)), matmul(vq, transpose(uk)));
    Var vv = matmul(vq, transpose(vk));
    Var product = add(add(mul(mul(phi_w, phi_w), uu), mul(mul(phi_w, phi_c), mixed)), mul(mul(phi_c, phi_c), vv));
    e = add(e, product);
  }
  return scale(e, inv_sqrt(p.d_z()));
}

AttentionResult attend(Var e, Var v) {
  Var alpha = softmax_rows(e);
  return {mix_rows(alpha, v), alpha};
}

}  // namespace

Tensor uniform_fan_in(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  Tensor t({rows, cols});
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

SelfAttentionParams SelfAttentionParams::init(std::size_t d_x, std::size_t d_z, Rng& rng, const std::string& prefix) {
  SelfAttentionParams p;
  p.wq = Parameter(prefix + ".WQ", uniform_fan_in(d_x, d_z, rng));
  p.wk = Parameter(prefix + ".WK", uniform_fan_in(d_x, d_z, rng));
  p.wv = Parameter(prefix + ".WV", uniform_fan_in(d_x, d_z, rng));
  return p;
}

ParameterList SelfAttentionParams::parameters() { return {&wq, &wk, &wv}; }

DasAttParams DasAttParams::init(std::size_t d_x, std::size_t d_z, double distance_scale, Rng& rng,
                                const std::string& prefix) {
  if (!(distance_scale > 0.0)) throw ConfigError("distance_scale must be positive");
  DasAttParams p;
  p.proj = SelfAttentionParams::init(d_x, d_z, rng, prefix);
  p.u_key = Parameter(prefix + ".uK", normal_row(d_z, kEndpointStd, rng));
  p.v_key = Parameter(prefix + ".vK", normal_row(d_z, kEndpointStd, rng));
  p.u_query = Parameter(prefix + ".uQ", normal_row(d_z, kEndpointStd, rng));
  p.v_query = Parameter(prefix + ".vQ", normal_row(d_z, kEndpointStd, rng));
  p.u_value = Parameter(prefix + ".uV", normal_row(d_z, kEndpointStd, rng));
  p.v_value = Parameter(prefix + ".vV", normal_row(d_z, kEndpointStd, rng));
  p.beta = Parameter(prefix + ".beta", Tensor({1, 1}, 10.0));
  p.theta = Parameter(prefix + ".theta", Tensor({1, 1}, -5.0));
  p.distance_scale = distance_scale;
  return p;
}

ParameterList DasAttParams::parameters() {
  ParameterList out = proj.parameters();
  if (roles.key) out.insert(out.end(), {&u_key, &v_key});
  if (roles.query) out.insert(out.end(), {&u_query, &v_query});
  if (roles.value) out.insert(out.end(), {&u_value, &v_value});
  if (roles.any() && phi == PhiKind::Sigmoid) out.insert(out.end(), {&beta, &theta});
  return out;
}

void DasAttParams::set_embeddings_trainable(bool trainable) {
  for (Parameter* e : {&u_key, &v_key, &u_query, &v_query, &u_value, &v_value}) e->trainable = trainable;
}

DiscreteRelParams DiscreteRelParams::init(std::size_t d_x, std::size_t d_z, std::size_t bins, double max_distance,
                                          Rng& rng, const std::string& prefix) {
  if (bins == 0) throw ConfigError("discrete relative attention needs at least one bin");
  if (!(max_distance > 0.0)) throw ConfigError("max_distance must be positive");
  DiscreteRelParams p;
  p.proj = SelfAttentionParams::init(d_x, d_z, rng, prefix);
  p.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b)
    p.edges[b] = max_distance * static_cast<double>(b) / static_cast<double>(bins);
  p.r_key = Parameter(prefix + ".rK", normal_matrix(bins, d_z, kEndpointStd, rng));
  p.r_query = Parameter(prefix + ".rQ", normal_matrix(bins, d_z, kEndpointStd, rng));
  p.r_value = Parameter(prefix + ".rV", normal_matrix(bins, d_z, kEndpointStd, rng));
  return p;
}

ParameterList DiscreteRelParams::parameters() {
  ParameterList out = proj.parameters();
  if (roles.key) out.push_back(&r_key);
  if (roles.query) out.push_back(&r_query);
  if (roles.value) out.push_back(&r_value);
  return out;
}

AbmilParams AbmilParams::init(std::size_t d_z, std::size_t hidden, Rng& rng, const std::string& prefix) {
  if (hidden == 0) throw ConfigError("AB-MIL hidden size must be >= 1");
  AbmilParams p;
  p.v = Parameter(prefix + ".V", uniform_fan_in(d_z, hidden, rng));
  p.w = Parameter(prefix + ".w", uniform_fan_in(hidden, 1, rng));
  return p;
}

ParameterList AbmilParams::parameters() { return {&v, &w}; }

double phi(double normalized_distance, double beta, double theta) {
  const double t = beta * normalized_distance + theta;
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

Tensor bias_vector(double normalized_distance, const Tensor& u, const Tensor& v, double beta, double theta) {
  if (u.size() != v.size())
    throw DimensionError("bias endpoints differ in length: " + shape_string(u.shape()) + " vs " +
                         shape_string(v.shape()));
  const double f = phi(normalized_distance, beta, theta);
  Tensor b({u.size()});
  for (std::size_t i = 0; i < u.size(); ++i) b[i] = f * u[i] + (1.0 - f) * v[i];
  return b;
}

Var interpolation_weights(Tape& tape, const Tensor& distances, DasAttParams& p) {
  Tensor scaled = distances;
  for (double& d : scaled.data()) d /= p.distance_scale;
  Var dn = tape.constant(std::move(scaled));
  if (p.phi == PhiKind::Identity) return dn;
  return sigmoid(add(mul(dn, tape.param(p.beta)), tape.param(p.theta)));
}

Var compat_expanded(Var x, const Tensor& distances, DasAttParams& p) {
  check_inputs(x, distances, p.proj.d_x());
  Tape& tape = x.tape();
  const std::size_t n = x.dim(0);
  const Projections pr = project(x, p.proj);

  std::vector<std::size_t> rows, cols;
  pair_indices(n, rows, cols);
  Var lhs = gather_rows(pr.q, rows);
  Var rhs = gather_rows(pr.k, cols);

  Var bias_q, bias_k;
  if (p.roles.key || p.roles.query) {
    Var w = reshape(interpolation_weights(tape, distances, p), {n * n, 1});
    Var wc = one_minus(w);
    auto pair_bias = [&](Parameter& u, Parameter& v) {
      return add(matmul(w, tape.param(u)), matmul(wc, tape.param(v)));
    };
    if (p.roles.query) {
      bias_q = pair_bias(p.u_query, p.v_query);
      lhs = add(lhs, bias_q);
    }
    if (p.roles.key) {
      bias_k = pair_bias(p.u_key, p.v_key);
      rhs = add(rhs, bias_k);
    }
  }
  Var e = sum_rows(mul(lhs, rhs));
  if (p.subtract_product && bias_q.valid() && bias_k.valid()) e = sub(e, sum_rows(mul(bias_q, bias_k)));
  return scale(reshape(e, {n, n}), inv_sqrt(p.d_z()));
}

Var compat_efficient(Var x, const Tensor& distances, DasAttParams& p) {
  check_inputs(x, distances, p.proj.d_x());
  const Projections pr = project(x, p.proj);
  if (!p.roles.key && !p.roles.query) return scale(matmul(pr.q, transpose(pr.k)), inv_sqrt(p.d_z()));
  Var w = interpolation_weights(x.tape(), distances, p);
  return compat_from_projections(pr, w, one_minus(w), p);
}

AttentionResult das_att(Var x, const Tensor& distances, DasAttParams& p) {
  check_inputs(x, distances, p.proj.d_x());
  if (x.dim(0) == 0) throw PreconditionError("das_att needs at least one instance");
  Tape& tape = x.tape();
  const Projections pr = project(x, p.proj);
  if (!p.roles.any()) return attend(scale(matmul(pr.q, transpose(pr.k)), inv_sqrt(p.d_z())), pr.v);

  Var w = interpolation_weights(tape, distances, p);
  Var wc = one_minus(w);
  Var e = (p.roles.key || p.roles.query) ? compat_from_projections(pr, w, wc, p)
                                         : scale(matmul(pr.q, transpose(pr.k)), inv_sqrt(p.d_z()));
  AttentionResult r = attend(e, pr.v);
  if (p.roles.value) {
    // sum_j alpha_ij bV_ij = (sum_j alpha_ij phi_ij) uV + (sum_j alpha_ij (1 - phi_ij)) vV
    Var to_u = sum_rows(mul(r.alpha, w));
    Var to_v = sum_rows(mul(r.alpha, wc));
    r.z = add(r.z, add(matmul(to_u, tape.param(p.u_value)), matmul(to_v, tape.param(p.v_value))));
  }
  return r;
}

AttentionResult vanilla_sa(Var x, SelfAttentionParams& p) {
  if (x.value().rank() != 2 || x.dim(1) != p.d_x())
    throw DimensionError("vanilla_sa input " + shape_string(x.shape()) + " incompatible with d_x=" +
                         std::to_string(p.d_x()));
  const Projections pr = project(x, p);
  return attend(scale(matmul(pr.q, transpose(pr.k)), inv_sqrt(p.d_z())), pr.v);
}

std::size_t bin_of(double distance, std::span<const double> edges) {
  if (edges.size() < 2) throw ConfigError("need at least one bin (two edges)");
  const std::size_t k = edges.size() - 1;
  if (distance < edges[1]) return 0;
  if (distance >= edges[k]) return k - 1;
  // First edge strictly greater than distance closes the bin.
  const auto it = std::upper_bound(edges.begin(), edges.end(), distance);
  return static_cast<std::size_t>(it - edges.begin()) - 1;
}

BinIndex assign_bins(const Tensor& distances, std::span<const double> edges) {
  if (edges.size() < 2) throw ConfigError("need at least one bin (two edges)");
  for (std::size_t b = 1; b < edges.size(); ++b)
    if (!(edges[b] > edges[b - 1])) throw ConfigError("bin edges must be strictly increasing");
  const std::size_t n = distances.dim(0);
  BinIndex bins{n, edges.size() - 1, std::vector<std::size_t>(n * n)};
  for (std::size_t i = 0; i < n * n; ++i) bins.index[i] = bin_of(distances[i], edges);
  return bins;
}

AttentionResult discrete_rel_sa(Var x, const Tensor& distances, DiscreteRelParams& p) {
  check_inputs(x, distances, p.proj.d_x());
  Tape& tape = x.tape();
  const BinIndex bins = assign_bins(distances, p.edges);
  const Projections pr = project(x, p.proj);

  Var e = matmul(pr.q, transpose(pr.k));
  if (p.roles.key) e = add(e, select_by_bin(matmul(pr.q, transpose(tape.param(p.r_key))), bins));
  if (p.roles.query)
    e = add(e, transpose(select_by_bin(matmul(pr.k, transpose(tape.param(p.r_query))), bins.transposed())));
  AttentionResult r = attend(scale(e, inv_sqrt(p.proj.d_z())), pr.v);
  if (p.roles.value) r.z = add(r.z, matmul(bin_totals(r.alpha, bins), tape.param(p.r_value)));
  return r;
}

AttentionResult abmil_pool(Var z, AbmilParams& p) {
  if (z.value().rank() != 2 || z.dim(1) != p.v.value.dim(0))
    throw DimensionError("abmil_pool input " + shape_string(z.shape()) + " incompatible with V " +
                         shape_string(p.v.value.shape()));
  Tape& tape = z.tape();
  Var scores = matmul(tanh(matmul(z, tape.param(p.v))), tape.param(p.w));  // n x 1
  Var alpha = softmax_rows(transpose(scores));                                // 1 x n
  return {mix_rows(alpha, z), alpha};
}

}  // namespace dasmil
