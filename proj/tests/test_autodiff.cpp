#include <gtest/gtest.h>

#include <cmath>

#include "dasmil/autodiff.hpp"
#include "dasmil/errors.hpp"
#include "dasmil/gradcheck.hpp"
#include "dasmil/ops.hpp"
#include "oracles.hpp"

using namespace dasmil;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST(Matmul, IdentityAndZero) {
  Tape tape;
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(tape.constant(a), tape.constant(Tensor::matrix({{1, 0}, {0, 1}}))).value(), a);
  EXPECT_EQ(matmul(tape.constant(a), tape.constant(Tensor({2, 2}, 0.0))).value(), Tensor({2, 2}, 0.0));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(1);
  Tape tape;
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  const Tensor c = matmul(tape.constant(a), tape.constant(b)).value();
  const Tensor ref = oracle::matmul(a, b);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
}

TEST(Matmul, ErrorNamesBothShapes) {
  Tape tape;
  try {
    matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3})));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(MixRows, MatchesMatmulAndIgnoresRowOrder) {
  Rng rng(31);
  const Tensor w = random_tensor({4, 6}, rng), v = random_tensor({6, 5}, rng);
  Tape tape;
  const Tensor mixed = mix_rows(tape.constant(w), tape.constant(v)).value();
  const Tensor expected = oracle::matmul(w, v);
  for (std::size_t i = 0; i < mixed.size(); ++i) EXPECT_NEAR(mixed[i], expected[i], 1e-14);

  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  Tensor wp({4, 6}), vp({6, 5});
  for (std::size_t j = 0; j < 6; ++j) {
    for (std::size_t i = 0; i < 4; ++i) wp.at(i, j) = w.at(i, perm[j]);
    for (std::size_t c = 0; c < 5; ++c) vp.at(j, c) = v.at(perm[j], c);
  }
  EXPECT_EQ(mix_rows(tape.constant(wp), tape.constant(vp)).value(), mixed);
  EXPECT_THROW(mix_rows(tape.constant(w), tape.constant(random_tensor({5, 5}, rng))), DimensionError);
}

TEST(Broadcast, RowVectorStretchesOverRows) {
  Tape tape;
  const Var r = add(tape.constant(Tensor::matrix({{1, 2}, {3, 4}})), tape.constant(Tensor::matrix({{10, 20}})));
  EXPECT_EQ(r.value(), Tensor::matrix({{11, 22}, {13, 24}}));
  EXPECT_THROW(add(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 2}))), DimensionError);
}

TEST(Softmax, UniformRowAndShiftInvariance) {
  Tape tape;
  const Tensor s = softmax_rows(tape.constant(Tensor({1, 3}, 0.0))).value();
  for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  const Tensor a = softmax_rows(tape.constant(Tensor::matrix({{1, 2}}))).value();
  const Tensor b = softmax_rows(tape.constant(Tensor::matrix({{101, 102}}))).value();
  EXPECT_EQ(a, b);
}

TEST(Softmax, MatchesHighPrecisionOracle) {
  Tape tape;
  const Tensor e = Tensor::matrix({{1, 2, 3}});
  const Tensor s = softmax_rows(tape.constant(e)).value();
  const Tensor ref = oracle::softmax_rows(e);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(s[j], ref[j], 1e-12);
  EXPECT_NEAR(s[0], 0.09003, 1e-5);
  EXPECT_NEAR(s[1], 0.24473, 1e-5);
  EXPECT_NEAR(s[2], 0.66524, 1e-5);
}

TEST(Softmax, RowsSumToOneWithEntriesInOpenInterval) {
  Rng rng(2);
  Tape tape;
  const Tensor s = softmax_rows(tape.constant(random_tensor({6, 6}, rng, -5, 5))).value();
  for (std::size_t i = 0; i < 6; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_GT(s.at(i, j), 0.0);
      EXPECT_LT(s.at(i, j), 1.0);
      total += s.at(i, j);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Softmax, NanIsNumericError) {
  Tape tape;
  EXPECT_THROW(softmax_rows(tape.constant(Tensor::matrix({{1, NAN}}))), NumericError);
}

TEST(Elementwise, SigmoidReluTanhLog) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(0.0));
  Var s = sigmoid(x);
  EXPECT_EQ(s.value().item(), 0.5);
  tape.backward(sum(s));
  EXPECT_EQ(tape.grad(x).item(), 0.25);

  Tape t2;
  Var y = t2.leaf(Tensor::scalar(-3.0));
  Var r = relu(y);
  EXPECT_EQ(r.value().item(), 0.0);
  t2.backward(sum(r));
  EXPECT_EQ(t2.grad(y).item(), 0.0);

  Tape t3;
  for (double v : {-1.0, 0.5, 2.0}) {
    // Series oracle: tanh(x) = (e^2x - 1) / (e^2x + 1) in long double.
    const long double e2 = std::exp(2.0L * v);
    const double ref = static_cast<double>((e2 - 1.0L) / (e2 + 1.0L));
    EXPECT_NEAR(tanh(t3.constant(Tensor::scalar(v))).value().item(), ref, 1e-12);
  }
  EXPECT_THROW(log(t3.constant(Tensor::vector({1.0, 0.0}))), NumericError);
  EXPECT_THROW(log(t3.constant(Tensor::vector({-1.0}))), NumericError);
}

TEST(Conv2d, UnitKernelIsIdentityAndZeroKernelGivesBias) {
  Rng rng(3);
  Tape tape;
  const Tensor in = random_tensor({1, 5, 5}, rng);
  const Var id = conv2d(tape.constant(in), tape.constant(Tensor({1, 1, 1, 1}, 1.0)), tape.constant(Tensor({1}, 0.0)));
  EXPECT_EQ(id.value(), in);
  const Var b = conv2d(tape.constant(in), tape.constant(Tensor({2, 1, 3, 3}, 0.0)),
                       tape.constant(Tensor::vector({0.5, -2.0})));
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(b.value()[i], 0.5);
    EXPECT_EQ(b.value()[9 + i], -2.0);
  }
}

TEST(Conv2d, MatchesLoopOracle) {
  Rng rng(4);
  Tape tape;
  const Tensor in = random_tensor({1, 5, 5}, rng), k = random_tensor({1, 1, 3, 3}, rng), bias({1}, 0.0);
  const Tensor out = conv2d(tape.constant(in), tape.constant(k), tape.constant(bias)).value();
  const Tensor ref = oracle::conv2d(in, k, bias, 1);
  ASSERT_EQ(out.shape(), Shape({1, 3, 3}));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-12);

  const Tensor in2 = random_tensor({3, 9, 8}, rng), k2 = random_tensor({4, 3, 3, 3}, rng),
               b2 = random_tensor({4}, rng);
  const Tensor out2 = conv2d(tape.constant(in2), tape.constant(k2), tape.constant(b2), 2).value();
  const Tensor ref2 = oracle::conv2d(in2, k2, b2, 2);
  ASSERT_EQ(out2.shape(), ref2.shape());
  for (std::size_t i = 0; i < out2.size(); ++i) EXPECT_NEAR(out2[i], ref2[i], 1e-12);
}

TEST(Conv2d, BatchedInputMatchesPerImage) {
  Rng rng(5);
  Tape tape;
  const Tensor batch = random_tensor({2, 1, 6, 6}, rng), k = random_tensor({2, 1, 3, 3}, rng),
               b = random_tensor({2}, rng);
  const Tensor out = conv2d(tape.constant(batch), tape.constant(k), tape.constant(b)).value();
  for (std::size_t n = 0; n < 2; ++n) {
    Tensor one({1, 6, 6});
    std::copy_n(batch.data().begin() + n * 36, 36, one.data().begin());
    const Tensor ref = oracle::conv2d(one, k, b, 1);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out[n * ref.size() + i], ref[i], 1e-12);
  }
}

TEST(Conv2d, KernelLargerThanInputIsDimensionError) {
  Tape tape;
  EXPECT_THROW(conv2d(tape.constant(Tensor({1, 2, 2})), tape.constant(Tensor({1, 1, 3, 3})),
                      tape.constant(Tensor({1}))),
               DimensionError);
}

TEST(Maxpool, BasicAndLoopOracle) {
  Tape tape;
  EXPECT_EQ(maxpool2d(tape.constant(Tensor({1, 2, 2}, {1, 2, 3, 4})), 2, 2).value(), Tensor({1, 1, 1}, {4.0}));
  Rng rng(6);
  const Tensor in = random_tensor({1, 4, 4}, rng);
  EXPECT_EQ(maxpool2d(tape.constant(in), 2, 2).value(), oracle::maxpool2d(in, 2, 2));
  EXPECT_THROW(maxpool2d(tape.constant(Tensor({1, 1, 1})), 2, 2), DimensionError);
}

TEST(Maxpool, TiesRouteToFirstElement) {
  Tape tape;
  Var x = tape.leaf(Tensor({1, 2, 2}, 7.0));
  Var y = maxpool2d(x, 2, 2);
  EXPECT_EQ(y.value().item(), 7.0);
  tape.backward(sum(y));
  EXPECT_EQ(tape.grad(x), Tensor({1, 2, 2}, {1, 0, 0, 0}));
}

TEST(Maxpool, RoutedGradientSumsToIncoming) {
  Rng rng(7);
  Tape tape;
  Var x = tape.leaf(random_tensor({2, 6, 6}, rng));
  Var w = tape.constant(random_tensor({2, 3, 3}, rng));
  Var y = mul(maxpool2d(x, 2, 2), w);
  tape.backward(sum(y));
  double routed = 0.0, incoming = 0.0;
  for (double g : tape.grad(x).values()) routed += g;
  for (double v : w.value().values()) incoming += v;
  EXPECT_DOUBLE_EQ(routed, incoming);
  for (double g : tape.grad(x).values()) {
    bool matches = g == 0.0;
    for (double v : w.value().values()) matches |= g == v;
    EXPECT_TRUE(matches);
  }
}

TEST(Dropout, IdentityCasesAndConfigErrors) {
  Rng rng(8);
  Tape tape;
  const Tensor x = random_tensor({4, 5}, rng);
  EXPECT_EQ(dropout(tape.constant(x), 0.0, Mode::Train, rng).value(), x);
  EXPECT_EQ(dropout(tape.constant(x), 0.0, Mode::Eval, rng).value(), x);
  EXPECT_EQ(dropout(tape.constant(x), 0.5, Mode::Eval, rng).value(), x);
  EXPECT_THROW(dropout(tape.constant(x), 1.0, Mode::Train, rng), ConfigError);
  EXPECT_THROW(dropout(tape.constant(x), -0.1, Mode::Train, rng), ConfigError);
}

TEST(Dropout, InvertedScalingKeepsTheMean) {
  Rng rng(9);
  Tape tape;
  const Tensor out = dropout(tape.constant(Tensor({100000}, 1.0)), 0.5, Mode::Train, rng).value();
  double total = 0.0;
  for (double v : out.values()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    total += v;
  }
  EXPECT_NEAR(total / 100000.0, 1.0, 0.02);
}

TEST(MaxOverInstances, ColumnMaxima) {
  Tape tape;
  EXPECT_EQ(max_over_instances(tape.constant(Tensor::matrix({{1, 5}, {3, 2}}))).value(), Tensor::vector({3, 5}));
  EXPECT_EQ(max_over_instances(tape.constant(Tensor::matrix({{4, -1, 2}}))).value(), Tensor::vector({4, -1, 2}));
  Rng rng(10);
  const Tensor z = random_tensor({7, 4}, rng);
  const Tensor m = max_over_instances(tape.constant(z)).value();
  for (std::size_t j = 0; j < 4; ++j) {
    double best = z.at(0, j);
    for (std::size_t i = 1; i < 7; ++i) best = std::max(best, z.at(i, j));
    EXPECT_EQ(m[j], best);
  }
}

TEST(MaxOverInstances, TiesRouteToSmallestIndex) {
  Tape tape;
  Var z = tape.leaf(Tensor::matrix({{1, 2}, {1, 3}, {0, 3}}));
  tape.backward(sum(max_over_instances(z)));
  EXPECT_EQ(tape.grad(z), Tensor::matrix({{1, 0}, {0, 1}, {0, 0}}));
}

TEST(Backward, ConstantLossGivesZeroGradients) {
  Parameter w("w", Tensor::matrix({{1, 2}, {3, 4}}));
  w.grad.fill(9.0);
  Tape tape;
  tape.param(w);
  Var loss = tape.constant(Tensor::scalar(3.0));
  tape.backward(loss);
  EXPECT_EQ(w.grad, Tensor({2, 2}, 0.0));
}

TEST(Backward, SumGivesAllOnes) {
  Parameter w("w", Tensor({2, 3, 2}, 0.7));
  Tape tape;
  tape.backward(sum(tape.param(w)));
  EXPECT_EQ(w.grad, Tensor({2, 3, 2}, 1.0));
}

TEST(Backward, NonScalarLossIsDimensionError) {
  Parameter w("w", Tensor({2, 2}, 1.0));
  Tape tape;
  EXPECT_THROW(tape.backward(tape.param(w)), DimensionError);
}

TEST(Backward, ReplayIsBitIdentical) {
  Rng rng(11);
  Parameter a("a", random_tensor({3, 4}, rng)), b("b", random_tensor({4, 3}, rng));
  Tape tape;
  Var loss = sum(softmax_rows(matmul(tanh(tape.param(a)), tape.param(b))));
  loss = sum(mul(softmax_rows(matmul(tape.param(a), tape.param(b))), tape.constant(random_tensor({3, 3}, rng))));
  tape.backward(loss);
  const Tensor ga = a.grad, gb = b.grad;
  tape.backward(loss);
  EXPECT_EQ(a.grad, ga);
  EXPECT_EQ(b.grad, gb);
}

TEST(Backward, ParameterBoundTwiceAccumulates) {
  Parameter w("w", Tensor::vector({2.0}));
  Tape tape;
  Var x = tape.param(w);
  EXPECT_EQ(tape.param(w).id(), x.id());
  tape.backward(sum(mul(x, x)));
  EXPECT_EQ(w.grad.item(), 4.0);
}

TEST(GradCheck, LinearAndSigmoid) {
  Rng rng(12);
  Parameter w("w", random_tensor({3, 2}, rng));
  const Tensor x = random_tensor({4, 3}, rng);
  auto r = grad_check([&](Tape& t) { return sum(matmul(t.constant(x), t.param(w))); }, {&w});
  EXPECT_LT(r.max_relative_error, 1e-9);
  EXPECT_EQ(r.coordinates, 6u);

  Parameter s("s", Tensor::scalar(0.0));
  auto rs = grad_check([&](Tape& t) { return sum(sigmoid(t.param(s))); }, {&s});
  EXPECT_DOUBLE_EQ(rs.analytic, 0.25);
  EXPECT_LT(rs.max_relative_error, 1e-8);
}

TEST(GradCheck, DetectsNondeterministicClosure) {
  Parameter w("w", Tensor::scalar(1.0));
  int calls = 0;
  EXPECT_THROW(grad_check(
                   [&](Tape& t) {
                     ++calls;
                     return sum(scale(t.param(w), static_cast<double>(calls)));
                   },
                   {&w}),
               DeterminismError);
}

// Every differentiable op, each on small random shapes.
TEST(GradCheck, EveryOpMatchesFiniteDifferences) {
  Rng rng(13);
  Parameter a("a", random_tensor({3, 4}, rng)), b("b", random_tensor({4, 3}, rng)),
      row("row", random_tensor({1, 4}, rng)), pos("pos", random_tensor({3, 4}, rng, 0.5, 2.0)),
      img("img", random_tensor({2, 2, 6, 6}, rng)), ker("ker", random_tensor({3, 2, 3, 3}, rng)),
      kb("kb", random_tensor({3}, rng));
  const Tensor weights = random_tensor({3, 4}, rng);
  const Tensor weights33 = random_tensor({3, 3}, rng);
  std::vector<std::pair<std::string, ForwardClosure>> cases = {
      {"matmul", [&](Tape& t) { return sum(mul(matmul(t.param(a), t.param(b)), t.constant(weights33))); }},
      {"transpose", [&](Tape& t) { return sum(mul(transpose(t.param(b)), t.param(a))); }},
      {"add_broadcast", [&](Tape& t) { return sum(mul(add(t.param(a), t.param(row)), t.param(a))); }},
      {"sub_broadcast", [&](Tape& t) { return sum(mul(sub(t.param(a), t.param(row)), t.param(a))); }},
      {"mul_broadcast", [&](Tape& t) { return sum(mul(t.param(a), t.param(row))); }},
      {"scale_shift", [&](Tape& t) { return sum(mul(add_scalar(scale(t.param(a), 1.5), 0.3), t.param(a))); }},
      {"one_minus", [&](Tape& t) { return sum(mul(one_minus(t.param(a)), t.param(a))); }},
      {"sigmoid", [&](Tape& t) { return sum(mul(sigmoid(t.param(a)), t.constant(weights))); }},
      {"tanh", [&](Tape& t) { return sum(mul(tanh(t.param(a)), t.constant(weights))); }},
      {"relu", [&](Tape& t) { return sum(mul(relu(t.param(a)), t.constant(weights))); }},
      {"log", [&](Tape& t) { return sum(mul(log(t.param(pos)), t.constant(weights))); }},
      {"clamp", [&](Tape& t) { return sum(mul(clamp(t.param(a), -0.5, 0.5), t.constant(weights))); }},
      {"softmax", [&](Tape& t) { return sum(mul(softmax_rows(t.param(a)), t.constant(weights))); }},
      {"sum_rows", [&](Tape& t) { return sum(mul(sum_rows(t.param(a)), sum_rows(t.param(a)))); }},
      {"mix_rows", [&](Tape& t) { return sum(mul(mix_rows(t.param(a), t.param(b)), t.constant(weights33))); }},
      {"gather", [&](Tape& t) { return sum(mul(gather_rows(t.param(a), {2, 0, 2, 1}), gather_rows(t.param(a), {0, 1, 2, 0}))); }},
      {"conv", [&](Tape& t) {
         Var y = conv2d(t.param(img), t.param(ker), t.param(kb));
         return sum(mul(y, y));
       }},
      {"conv_stride", [&](Tape& t) {
         Var y = conv2d(t.param(img), t.param(ker), t.param(kb), 2);
         return sum(mul(y, y));
       }},
      {"maxpool", [&](Tape& t) {
         Var y = maxpool2d(t.param(img), 2, 2);
         return sum(mul(y, y));
       }},
      {"max_over_instances", [&](Tape& t) {
         Var y = max_over_instances(t.param(a));
         return sum(mul(y, y));
       }},
  };
  for (auto& [name, fn] : cases) {
    std::vector<Parameter*> all = {&a, &b, &row, &pos, &img, &ker, &kb};
    auto r = grad_check(fn, all);
    EXPECT_LT(r.max_relative_error, 1e-4) << name << " worst " << r.worst_parameter << "[" << r.worst_index << "]";
  }
}

TEST(GradCheck, BinnedSelectionAndTotals) {
  Rng rng(14);
  Parameter p("p", random_tensor({4, 3}, rng)), a("a", random_tensor({4, 4}, rng));
  BinIndex bins{4, 3, {0, 1, 2, 2, 1, 0, 0, 2, 2, 2, 1, 0, 0, 0, 0, 1}};
  auto r = grad_check(
      [&](Tape& t) {
        Var s = select_by_bin(t.param(p), bins);
        Var u = bin_totals(t.param(a), bins);
        return add(sum(mul(s, t.param(a))), sum(mul(u, u)));
      },
      {&p, &a});
  EXPECT_LT(r.max_relative_error, 1e-4);

  Tape tape;
  const Tensor sel = select_by_bin(tape.constant(p.value), bins).value();
  const Tensor tot = bin_totals(tape.constant(a.value), bins).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(sel.at(i, j), p.value.at(i, bins(i, j)));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < 4; ++j)
        if (bins(i, j) == k) s += a.value.at(i, j);
      EXPECT_DOUBLE_EQ(tot.at(i, k), s);
    }
}
