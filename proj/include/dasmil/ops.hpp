#pragma once

#include <cstddef>
#include <vector>

#include "dasmil/autodiff.hpp"
#include "dasmil/rng.hpp"

namespace dasmil {

enum class Mode { Train, Eval };

enum class Activation { Sigmoid, Relu, Tanh, Log };

// Linear algebra (rank-2 operands).
Var matmul(Var a, Var b);
Var transpose(Var a);

// Elementwise arithmetic with numpy-style broadcasting: shapes are aligned on
// the right and an extent of 1 stretches to match the other operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
/// 1 - a
Var one_minus(Var a);

Var elementwise(Var a, Activation fn);
inline Var sigmoid(Var a) { return elementwise(a, Activation::Sigmoid); }
inline Var relu(Var a) { return elementwise(a, Activation::Relu); }
inline Var tanh(Var a) { return elementwise(a, Activation::Tanh); }
inline Var log(Var a) { return elementwise(a, Activation::Log); }

/// Clamps into [lo, hi]; the gradient is zero where clamping took effect.
Var clamp(Var a, double lo, double hi);

/// Row-wise softmax of a rank-2 tensor, with per-row max subtraction.
/// Normalisers are summed in sorted order, so permuting a row permutes the
/// output exactly.
Var softmax_rows(Var a);

Var sum(Var a);
/// n x m -> n x 1, each row summed in sorted order.
Var sum_rows(Var a);
Var reshape(Var a, Shape shape);
/// out[r] = a[indices[r]] for a rank-2 `a`.
Var gather_rows(Var a, const std::vector<std::size_t>& indices);

/// Valid cross-correlation. `input` is C_in x H x W or N x C_in x H x W,
/// `kernels` C_out x C_in x k x k, `bias` C_out.
Var conv2d(Var input, Var kernels, Var bias, std::size_t stride = 1);

/// Window maximum over C x H x W or N x C x H x W. Gradient goes to the
/// first maximal element in row-major window order.
Var maxpool2d(Var input, std::size_t k, std::size_t stride);

/// Inverted dropout: survivors are scaled by 1/(1-p) in Train mode; Eval is identity.
Var dropout(Var a, double p, Mode mode, Rng& rng);

/// Column-wise maximum of an n x d tensor, returned with shape {d}. Ties go
/// to the smallest row index.
Var max_over_instances(Var z);

/// Bin assignment for an n x n pairwise relation, row-major.
struct BinIndex {
  std::size_t n = 0;
  std::size_t bins = 0;
  std::vector<std::size_t> index;

  std::size_t operator()(std::size_t i, std::size_t j) const { return index[i * n + j]; }
  BinIndex transposed() const;
};

/// out[i][j] = p[i][bins(i, j)] for p of shape n x k.
Var select_by_bin(Var p, const BinIndex& bins);

/// out[i][b] = sum over j with bins(i, j) == b of a[i][j], for a of shape n x n.
Var bin_totals(Var a, const BinIndex& bins);

/// weights (m x n) times values (n x d) with every output summed over n in
/// sorted order: reordering the n rows of values, together with the columns
/// of weights, leaves the result bitwise unchanged.
Var mix_rows(Var weights, Var values);

}  // namespace dasmil
