#include "dasmil/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "dasmil/errors.hpp"

namespace dasmil {

namespace {

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank)
    throw DimensionError(std::string(op) + " expects a rank-" + std::to_string(rank) +
                         " tensor, got " + shape_string(v.shape()));
}

// Sums in ascending order, so the result depends only on the multiset of terms.
double sorted_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (double t : terms) total += t;
  return total;
}

void accumulate(Tensor* grad, const Tensor& delta) {
  if (!grad) return;
  auto g = grad->data();
  auto d = delta.data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i];
}

// Index plan for a broadcasting binary operation.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  p.out.resize(rank);
  for (std::size_t ax = 0; ax < rank; ++ax) {
    if (pa[ax] == pb[ax] || pb[ax] == 1)
      p.out[ax] = pa[ax];
    else if (pa[ax] == 1)
      p.out[ax] = pb[ax];
    else
      throw DimensionError(std::string(op) + ": shapes " + shape_string(a) + " and " +
                           shape_string(b) + " do not broadcast");
  }
  auto strides = [&](const Shape& s) {
    std::vector<std::size_t> st(rank, 0);
    std::size_t acc = 1;
    for (std::size_t ax = rank; ax-- > 0;) {
      st[ax] = (s[ax] == 1) ? 0 : acc;
      acc *= s[ax];
    }
    return st;
  };
  p.stride_a = strides(pa);
  p.stride_b = strides(pb);
  return p;
}

template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t total = shape_size(p.out);
  if (p.same) {
    for (std::size_t o = 0; o < total; ++o) f(o, o, o);
    return;
  }
  const std::size_t rank = p.out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    f(o, ia, ib);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      ia += p.stride_a[ax];
      ib += p.stride_b[ax];
      if (idx[ax] < p.out[ax]) break;
      ia -= p.stride_a[ax] * p.out[ax];
      ib -= p.stride_b[ax] * p.out[ax];
      idx[ax] = 0;
    }
  }
}

enum class BinaryKind { Add, Sub, Mul };

Var binary(Var a, Var b, BinaryKind kind, const char* name) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape(), name));
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(plan->out);
  auto o = out.data();
  auto x = av.data();
  auto y = bv.data();
  switch (kind) {
    case BinaryKind::Add:
      for_each_broadcast(*plan, [&](std::size_t k, std::size_t i, std::size_t j) { o[k] = x[i] + y[j]; });
      break;
    case BinaryKind::Sub:
      for_each_broadcast(*plan, [&](std::size_t k, std::size_t i, std::size_t j) { o[k] = x[i] - y[j]; });
      break;
    case BinaryKind::Mul:
      for_each_broadcast(*plan, [&](std::size_t k, std::size_t i, std::size_t j) { o[k] = x[i] * y[j]; });
      break;
  }
  return a.tape().record(std::move(out), {a, b}, [plan, kind](const BackwardContext& ctx) {
    auto g = ctx.out_grad.data();
    auto x = ctx.inputs[0]->data();
    auto y = ctx.inputs[1]->data();
    Tensor* ga = ctx.input_grads[0];
    Tensor* gb = ctx.input_grads[1];
    for_each_broadcast(*plan, [&](std::size_t k, std::size_t i, std::size_t j) {
      switch (kind) {
        case BinaryKind::Add:
          if (ga) (*ga)[i] += g[k];
          if (gb) (*gb)[j] += g[k];
          break;
        case BinaryKind::Sub:
          if (ga) (*ga)[i] += g[k];
          if (gb) (*gb)[j] -= g[k];
          break;
        case BinaryKind::Mul:
          if (ga) (*ga)[i] += g[k] * y[j];
          if (gb) (*gb)[j] += g[k] * x[i];
          break;
      }
    });
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner extents differ for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  Tensor out({m, n}, 0.0);
  const auto A = a.value().data();
  const auto B = b.value().data();
  auto C = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double ail = A[i * k + l];
      if (ail == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) C[i * n + j] += ail * B[l * n + j];
    }
  return a.tape().record(std::move(out), {a, b}, [m, k, n](const BackwardContext& ctx) {
    const auto A = ctx.inputs[0]->data();
    const auto B = ctx.inputs[1]->data();
    const auto G = ctx.out_grad.data();
    if (Tensor* ga = ctx.input_grads[0]) {
      auto dA = ga->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[l * n + j];
          dA[i * k + l] += acc;
        }
    }
    if (Tensor* gb = ctx.input_grads[1]) {
      auto dB = gb->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          const double ail = A[i * k + l];
          if (ail == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) dB[l * n + j] += ail * G[i * n + j];
        }
    }
  });
}

Var transpose(Var a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  const auto A = a.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return a.tape().record(std::move(out), {a}, [m, n](const BackwardContext& ctx) {
    auto dA = ctx.input_grads[0]->data();
    const auto G = ctx.out_grad.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dA[i * n + j] += G[j * m + i];
  });
}

Var add(Var a, Var b) { return binary(a, b, BinaryKind::Add, "add"); }
Var sub(Var a, Var b) { return binary(a, b, BinaryKind::Sub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, BinaryKind::Mul, "mul"); }

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return a.tape().record(std::move(out), {a}, [factor](const BackwardContext& ctx) {
    auto d = ctx.input_grads[0]->data();
    const auto g = ctx.out_grad.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * g[i];
  });
}

Var add_scalar(Var a, double offset) {
  Tensor out = a.value();
  for (double& v : out.data()) v += offset;
  return a.tape().record(std::move(out), {a},
                         [](const BackwardContext& ctx) { accumulate(ctx.input_grads[0], ctx.out_grad); });
}

Var one_minus(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = 1.0 - v;
  return a.tape().record(std::move(out), {a}, [](const BackwardContext& ctx) {
    auto d = ctx.input_grads[0]->data();
    const auto g = ctx.out_grad.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
  });
}

Var elementwise(Var a, Activation fn) {
  Tensor out = a.value();
  auto o = out.data();
  switch (fn) {
    case Activation::Sigmoid:
      for (double& v : o) v = stable_sigmoid(v);
      break;
    case Activation::Relu:
      for (double& v : o) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::Tanh:
      for (double& v : o) v = std::tanh(v);
      break;
    case Activation::Log:
      for (double& v : o) {
        if (!(v > 0.0)) throw NumericError("log of non-positive value " + std::to_string(v));
        v = std::log(v);
      }
      break;
  }
  return a.tape().record(std::move(out), {a}, [fn](const BackwardContext& ctx) {
    auto d = ctx.input_grads[0]->data();
    const auto g = ctx.out_grad.data();
    const auto x = ctx.inputs[0]->data();
    const auto y = ctx.out_value.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      switch (fn) {
        case Activation::Sigmoid: d[i] += g[i] * y[i] * (1.0 - y[i]); break;
        case Activation::Relu: d[i] += x[i] > 0.0 ? g[i] : 0.0; break;
        case Activation::Tanh: d[i] += g[i] * (1.0 - y[i] * y[i]); break;
        case Activation::Log: d[i] += g[i] / x[i]; break;
      }
    }
  });
}

Var clamp(Var a, double lo, double hi) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::clamp(v, lo, hi);
  return a.tape().record(std::move(out), {a}, [lo, hi](const BackwardContext& ctx) {
    auto d = ctx.input_grads[0]->data();
    const auto g = ctx.out_grad.data();
    const auto x = ctx.inputs[0]->data();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (x[i] >= lo && x[i] <= hi) d[i] += g[i];
  });
}

Var softmax_rows(Var a) {
  require_rank(a, 2, "softmax_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out = a.value();
  auto o = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = o.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(row[j])) throw NumericError("softmax_rows: non-finite input");
      mx = std::max(mx, row[j]);
    }
    for (std::size_t j = 0; j < n; ++j) row[j] = std::exp(row[j] - mx);
    std::vector<double> terms(row, row + n);
    const double total = sorted_sum(terms);
    for (std::size_t j = 0; j < n; ++j) row[j] /= total;
  }
  return a.tape().record(std::move(out), {a}, [m, n](const BackwardContext& ctx) {
    auto d = ctx.input_grads[0]->data();
    const auto g = ctx.out_grad.data();
    const auto y = ctx.out_value.data();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.tape().record(Tensor::scalar(total), {a}, [](const BackwardContext& ctx) {
    const double g = ctx.out_grad[0];
    for (double& v : ctx.input_grads[0]->data()) v += g;
  });
}

Var sum_rows(Var a) {
  require_rank(a, 2, "sum_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({m, 1}, 0.0);
  const auto x = a.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> terms(x.begin() + static_cast<std::ptrdiff_t>(i * n),
                              x.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    out[i] = sorted_sum(terms);
  }
  return a.tape().record(std::move(out), {a}, [m, n](const BackwardContext& ctx) {
    auto d = ctx.input_grads[0]->data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] += ctx.out_grad[i];
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a},
                         [](const BackwardContext& ctx) { accumulate(ctx.input_grads[0], ctx.out_grad); });
}

Var gather_rows(Var a, const std::vector<std::size_t>& indices) {
  require_rank(a, 2, "gather_rows");
  const std::size_t rows = a.dim(0), n = a.dim(1);
  if (indices.empty()) throw DimensionError("gather_rows: empty index list");
  for (auto r : indices)
    if (r >= rows) throw DimensionError("gather_rows: row index out of range");
  Tensor out({indices.size(), n});
  const auto x = a.value().data();
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(indices[r] * n), n,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * n));
  return a.tape().record(std::move(out), {a}, [indices, n](const BackwardContext& ctx) {
    auto d = ctx.input_grads[0]->data();
    const auto g = ctx.out_grad.data();
    for (std::size_t r = 0; r < indices.size(); ++r)
      for (std::size_t c = 0; c < n; ++c) d[indices[r] * n + c] += g[r * n + c];
  });
}

Var conv2d(Var input, Var kernels, Var bias, std::size_t stride) {
  const Shape& is = input.shape();
  const bool batched = is.size() == 4;
  if (is.size() != 3 && !batched)
    throw DimensionError("conv2d: input must be C x H x W or N x C x H x W, got " + shape_string(is));
  require_rank(kernels, 4, "conv2d");
  if (stride == 0) throw ConfigError("conv2d: stride must be >= 1");
  const std::size_t nb = batched ? is[0] : 1;
  const std::size_t cin = is[is.size() - 3], h = is[is.size() - 2], w = is[is.size() - 1];
  const std::size_t cout = kernels.dim(0), k = kernels.dim(2);
  if (kernels.dim(1) != cin || kernels.dim(3) != k)
    throw DimensionError("conv2d: kernels " + shape_string(kernels.shape()) + " incompatible with input " +
                         shape_string(is));
  if (bias.value().size() != cout)
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " needs " + std::to_string(cout) +
                         " entries");
  if (k > h || k > w)
    throw DimensionError("conv2d: kernel " + shape_string(kernels.shape()) + " larger than input " +
                         shape_string(is));
  const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;

  Shape out_shape = batched ? Shape{nb, cout, oh, ow} : Shape{cout, oh, ow};
  Tensor out(out_shape);
  // Patch matrix per sample: rows (ci, kh, kw), columns output pixels.
  const std::size_t rows = cin * k * k, cols = oh * ow;
  auto patches = std::make_shared<std::vector<double>>(nb * rows * cols);
  {
    const auto X = input.value().data();
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t kh = 0; kh < k; ++kh)
          for (std::size_t kw = 0; kw < k; ++kw) {
            const double* src = X.data() + (n * cin + ci) * h * w + kh * w + kw;
            double* dst = patches->data() + (n * rows + (ci * k + kh) * k + kw) * cols;
            for (std::size_t y = 0; y < oh; ++y)
              for (std::size_t x = 0; x < ow; ++x) dst[y * ow + x] = src[(y * w + x) * stride];
          }
    const auto K = kernels.value().data();
    const auto B = bias.value().data();
    auto O = out.data();
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t co = 0; co < cout; ++co) {
        double* plane = O.data() + (n * cout + co) * cols;
        std::fill(plane, plane + cols, B[co]);
        for (std::size_t r = 0; r < rows; ++r) {
          const double wt = K[co * rows + r];
          const double* col = patches->data() + (n * rows + r) * cols;
          for (std::size_t t = 0; t < cols; ++t) plane[t] += wt * col[t];
        }
      }
  }

  return input.tape().record(
      std::move(out), {input, kernels, bias},
      [=](const BackwardContext& ctx) {
        const auto K = ctx.inputs[1]->data();
        const auto G = ctx.out_grad.data();
        Tensor* gx = ctx.input_grads[0];
        Tensor* gk = ctx.input_grads[1];
        Tensor* gb = ctx.input_grads[2];
        std::vector<double> gcol(gx ? rows * cols : 0);
        for (std::size_t n = 0; n < nb; ++n) {
          std::fill(gcol.begin(), gcol.end(), 0.0);
          for (std::size_t co = 0; co < cout; ++co) {
            const double* gplane = G.data() + (n * cout + co) * cols;
            if (gb) {
              double acc = 0.0;
              for (std::size_t t = 0; t < cols; ++t) acc += gplane[t];
              (*gb)[co] += acc;
            }
            for (std::size_t r = 0; r < rows; ++r) {
              if (gk) {
                const double* col = patches->data() + (n * rows + r) * cols;
                double acc = 0.0;
                for (std::size_t t = 0; t < cols; ++t) acc += gplane[t] * col[t];
                (*gk)[co * rows + r] += acc;
              }
              if (gx) {
                const double wt = K[co * rows + r];
                double* dst = gcol.data() + r * cols;
                for (std::size_t t = 0; t < cols; ++t) dst[t] += wt * gplane[t];
              }
            }
          }
          if (!gx) continue;
          auto GX = gx->data();
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t kh = 0; kh < k; ++kh)
              for (std::size_t kw = 0; kw < k; ++kw) {
                double* dst = GX.data() + (n * cin + ci) * h * w + kh * w + kw;
                const double* src = gcol.data() + ((ci * k + kh) * k + kw) * cols;
                for (std::size_t y = 0; y < oh; ++y)
                  for (std::size_t x = 0; x < ow; ++x) dst[(y * w + x) * stride] += src[y * ow + x];
              }
        }
      });
}

Var maxpool2d(Var input, std::size_t k, std::size_t stride) {
  const Shape& is = input.shape();
  if (is.size() != 3 && is.size() != 4)
    throw DimensionError("maxpool2d: input must be C x H x W or N x C x H x W, got " + shape_string(is));
  if (k == 0 || stride == 0) throw ConfigError("maxpool2d: window and stride must be >= 1");
  const bool batched = is.size() == 4;
  const std::size_t planes = batched ? is[0] * is[1] : is[0];
  const std::size_t h = is[is.size() - 2], w = is[is.size() - 1];
  if (k > h || k > w)
    throw DimensionError("maxpool2d: window " + std::to_string(k) + " exceeds input " + shape_string(is));
  const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  Shape out_shape = is;
  out_shape[is.size() - 2] = oh;
  out_shape[is.size() - 1] = ow;
  Tensor out(out_shape);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto X = input.value().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = p * h * w + (y * stride) * w + x * stride;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = p * h * w + (y * stride + dy) * w + (x * stride + dx);
            if (X[idx] > X[best]) best = idx;
          }
        const std::size_t o = (p * oh + y) * ow + x;
        out[o] = X[best];
        (*argmax)[o] = best;
      }
  return input.tape().record(std::move(out), {input}, [argmax](const BackwardContext& ctx) {
    auto d = ctx.input_grads[0]->data();
    const auto g = ctx.out_grad.data();
    for (std::size_t o = 0; o < g.size(); ++o) d[(*argmax)[o]] += g[o];
  });
}

Var dropout(Var a, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::Eval || p == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(a.value().size());
  Tensor out = a.value();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    (*mask)[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
    o[i] *= (*mask)[i];
  }
  return a.tape().record(std::move(out), {a}, [mask](const BackwardContext& ctx) {
    auto d = ctx.input_grads[0]->data();
    const auto g = ctx.out_grad.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (*mask)[i];
  });
}

Var max_over_instances(Var z) {
  require_rank(z, 2, "max_over_instances");
  const std::size_t n = z.dim(0), d = z.dim(1);
  Tensor out({d});
  auto argmax = std::make_shared<std::vector<std::size_t>>(d, 0);
  const auto Z = z.value().data();
  for (std::size_t c = 0; c < d; ++c) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < n; ++r)
      if (Z[r * d + c] > Z[best * d + c]) best = r;
    (*argmax)[c] = best;
    out[c] = Z[best * d + c];
  }
  return z.tape().record(std::move(out), {z}, [argmax, d](const BackwardContext& ctx) {
    auto g = ctx.input_grads[0]->data();
    for (std::size_t c = 0; c < d; ++c) g[(*argmax)[c] * d + c] += ctx.out_grad[c];
  });
}

BinIndex BinIndex::transposed() const {
  BinIndex t{n, bins, std::vector<std::size_t>(index.size())};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) t.index[j * n + i] = index[i * n + j];
  return t;
}

Var select_by_bin(Var p, const BinIndex& bins) {
  require_rank(p, 2, "select_by_bin");
  const std::size_t n = bins.n, k = bins.bins;
  if (p.dim(0) != n || p.dim(1) != k)
    throw DimensionError("select_by_bin: table " + shape_string(p.shape()) + " does not match " +
                         std::to_string(n) + " rows and " + std::to_string(k) + " bins");
  Tensor out({n, n});
  const auto P = p.value().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = P[i * k + bins(i, j)];
  return p.tape().record(std::move(out), {p}, [bins](const BackwardContext& ctx) {
    auto d = ctx.input_grads[0]->data();
    const std::size_t n = bins.n, k = bins.bins;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i * k + bins(i, j)] += ctx.out_grad[i * n + j];
  });
}

Var bin_totals(Var a, const BinIndex& bins) {
  require_rank(a, 2, "bin_totals");
  const std::size_t n = bins.n, k = bins.bins;
  if (a.dim(0) != n || a.dim(1) != n)
    throw DimensionError("bin_totals: expected " + std::to_string(n) + "x" + std::to_string(n) + ", got " +
                         shape_string(a.shape()));
  Tensor out({n, k}, 0.0);
  const auto A = a.value().data();
  std::vector<std::vector<double>> terms(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& t : terms) t.clear();
    for (std::size_t j = 0; j < n; ++j) terms[bins(i, j)].push_back(A[i * n + j]);
    for (std::size_t b = 0; b < k; ++b) out[i * k + b] = sorted_sum(terms[b]);
  }
  return a.tape().record(std::move(out), {a}, [bins](const BackwardContext& ctx) {
    auto d = ctx.input_grads[0]->data();
    const std::size_t n = bins.n, k = bins.bins;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] += ctx.out_grad[i * k + bins(i, j)];
  });
}

Var mix_rows(Var weights, Var values) {
  require_rank(weights, 2, "mix_rows");
  require_rank(values, 2, "mix_rows");
  const std::size_t m = weights.dim(0), n = weights.dim(1), d = values.dim(1);
  if (values.dim(0) != n)
    throw DimensionError("mix_rows: weights " + shape_string(weights.shape()) + " incompatible with values " +
                         shape_string(values.shape()));
  Tensor out({m, d});
  const auto W = weights.value().data();
  const auto V = values.value().data();
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t j = 0; j < n; ++j) terms[j] = W[i * n + j] * V[j * d + c];
      out[i * d + c] = sorted_sum(terms);
    }
  return weights.tape().record(std::move(out), {weights, values}, [m, n, d](const BackwardContext& ctx) {
    const auto W = ctx.inputs[0]->data();
    const auto V = ctx.inputs[1]->data();
    const auto G = ctx.out_grad.data();
    if (Tensor* gw = ctx.input_grads[0])
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < d; ++c) acc += G[i * d + c] * V[j * d + c];
          (*gw)[i * n + j] += acc;
        }
    if (Tensor* gv = ctx.input_grads[1])
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t c = 0; c < d; ++c) (*gv)[j * d + c] += W[i * n + j] * G[i * d + c];
  });
}

}  // namespace dasmil
