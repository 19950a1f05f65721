#include "madun/error.hpp"
#include "madun/grad_check.hpp"
#include "madun/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace madun;
using testutil::random;
using testutil::tensor;

TEST(Tensor, ShapeAndGradInvariants)
{
  Tensor<double> t({2, 3, 4}, true);
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_FALSE(t.has_grad());
  t.grad()[5] = 3.0;
  EXPECT_EQ(t.grad().size(), t.numel());
  t.zero_grad();
  for (double g : t.grad()) EXPECT_EQ(g, 0.0);
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(Tensor, CopiesShareStorageClonesDoNot)
{
  Tensor<float> a({2}, {1.f, 2.f});
  auto          b = a;
  auto          c = a.clone();
  b.data()[0] = 7.f;
  EXPECT_EQ(a.data()[0], 7.f);
  EXPECT_EQ(c.data()[0], 1.f);
}

TEST(Conv2d, IdentityKernelReproducesInput)
{
  auto          x = random<double>({1, 3, 5, 4}, 1);
  Tensor<double> k({3, 3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) k.data()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
  auto tape = Tape<double>::inference();
  auto y = conv2d(tape, x, k, Tensor<double>({3}));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, ConstantInputAllOnesKernel)
{
  double const v = 2.5;
  auto         x = Tensor<double>::full({1, 1, 5, 6}, v);
  auto         k = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto         tape = Tape<double>::inference();
  auto         y = conv2d(tape, x, k);
  auto at = [&](std::size_t r, std::size_t c) { return y.data()[r * 6 + c]; };
  EXPECT_DOUBLE_EQ(at(2, 2), 9 * v);
  EXPECT_DOUBLE_EQ(at(0, 0), 4 * v);
  EXPECT_DOUBLE_EQ(at(4, 5), 4 * v);
  EXPECT_DOUBLE_EQ(at(0, 3), 6 * v);
}

TEST(Conv2d, MatchesNaiveLoopOracle)
{
  std::uint64_t seed = 10;
  for (auto [N, Cin, Cout, H, W] : std::vector<std::array<std::size_t, 5>>{
         {1, 2, 3, 5, 5}, {2, 4, 3, 8, 8}, {2, 1, 4, 7, 3}, {1, 3, 2, 1, 6}}) {
    auto x = random<double>({N, Cin, H, W}, ++seed);
    auto k = random<double>({Cout, Cin, 3, 3}, ++seed);
    auto b = random<double>({Cout}, ++seed);
    auto tape = Tape<double>::inference();
    auto y = conv2d(tape, x, k, b);
    auto ref = oracle::conv2d(testutil::values(x), N, Cin, H, W, testutil::values(k), Cout, 3, 3, testutil::values(b));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-6 * std::max(1.0, std::abs(ref[i])));
  }
  // 5x5 kernels are supported as well
  auto x = random<double>({1, 2, 6, 6}, 77);
  auto k = random<double>({2, 2, 5, 5}, 78);
  auto tape = Tape<double>::inference();
  auto y = conv2d(tape, x, k);
  auto ref = oracle::conv2d(testutil::values(x), 1, 2, 6, 6, testutil::values(k), 2, 5, 5);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-9);
}

TEST(Conv2d, ChannelMismatchIsShapeError)
{
  auto tape = Tape<double>::inference();
  EXPECT_THROW(conv2d(tape, Tensor<double>({1, 2, 4, 4}), Tensor<double>({1, 3, 3, 3})), ShapeError);
  EXPECT_THROW(conv2d(tape, Tensor<double>({1, 2, 4, 4}), Tensor<double>({1, 2, 2, 2})), ShapeError);
}

TEST(Elementwise, AnalyticValues)
{
  auto tape = Tape<double>::inference();
  EXPECT_DOUBLE_EQ(sigmoid(tape, Tensor<double>::scalar(0.0)).item(), 0.5);
  EXPECT_DOUBLE_EQ(madun::tanh(tape, Tensor<double>::scalar(0.0)).item(), 0.0);
  EXPECT_DOUBLE_EQ(relu(tape, Tensor<double>::scalar(-1.0)).item(), 0.0);
  auto x = random<double>({3, 4}, 3);
  auto y = hadamard(tape, x, Tensor<double>::full({3, 4}, 1.0));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
  EXPECT_THROW(add(tape, Tensor<double>({2}), Tensor<double>({3})), ShapeError);
  EXPECT_THROW(hadamard(tape, Tensor<double>({2, 1}), Tensor<double>({1, 2})), ShapeError);
}

TEST(Elementwise, SigmoidGradientAtZero)
{
  auto x = Tensor<double>::scalar(0.0, true);
  Tape<double> tape;
  tape.backward(sigmoid(tape, x));
  EXPECT_NEAR(x.grad()[0], 0.25, 1e-12);
  double const eps = 1e-6;
  double const fd = (oracle::sigmoid(eps) - oracle::sigmoid(-eps)) / (2 * eps);
  EXPECT_NEAR(x.grad()[0], fd, 1e-6);
}

TEST(ConcatChannels, LayoutAndDegenerateCase)
{
  auto r = random<double>({1, 1, 4, 4}, 5);
  auto z = random<double>({1, 32, 4, 4}, 6);
  auto tape = Tape<double>::inference();
  auto out = concat_channels(tape, r, z);
  EXPECT_EQ(out.shape(), (Shape{1, 33, 4, 4}));
  EXPECT_EQ(out.data()[0], r.data()[0]);
  EXPECT_EQ(out.data()[16], z.data()[0]);

  auto same = concat_channels(tape, r, Tensor<double>({1, 0, 4, 4}));
  EXPECT_EQ(testutil::values(same), testutil::values(r));
  EXPECT_THROW(concat_channels(tape, r, Tensor<double>({1, 2, 4, 5})), ShapeError);
  EXPECT_THROW(concat_channels(tape, r, Tensor<double>({2, 2, 4, 4})), ShapeError);
}

TEST(ConcatChannels, GradientOfSumIsOnes)
{
  auto a = random<double>({2, 2, 3, 3}, 7, true);
  auto b = random<double>({2, 3, 3, 3}, 8, true);
  Tape<double> tape;
  tape.backward(sum(tape, concat_channels(tape, a, b)));
  for (double g : a.grad()) EXPECT_EQ(g, 1.0);
  for (double g : b.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Matvec, ValuesAndGradients)
{
  auto tape = Tape<double>::inference();
  auto eye = tensor<double>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto v = random<double>({3}, 9);
  EXPECT_EQ(testutil::values(matvec(tape, eye, v)), testutil::values(v));
  auto y = matvec(tape, tensor<double>({2, 2}, {1, 2, 3, 4}), tensor<double>({2}, {1, 1}));
  EXPECT_EQ(testutil::values(y), (std::vector<double>{3, 7}));

  auto         A = random<double>({3, 4}, 10, true);
  auto         w = random<double>({4}, 11);
  Tape<double> rec;
  rec.backward(sum(rec, matvec(rec, A, w)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(A.grad()[i * 4 + j], w.data()[j], 1e-15);

  EXPECT_THROW(matvec(tape, A, Tensor<double>({3})), ShapeError);
  EXPECT_THROW(matvec_transposed(tape, A, Tensor<double>({4})), ShapeError);
}

TEST(L1Mean, ValuesAndOracle)
{
  auto tape = Tape<double>::inference();
  auto t = random<double>({4, 5}, 12);
  EXPECT_EQ(l1_mean(tape, t, t).item(), 0.0);
  auto shifted = Tensor<double>(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) shifted.data()[i] = t.data()[i] + 1.0;
  EXPECT_NEAR(l1_mean(tape, shifted, t).item(), 1.0, 1e-15);

  auto   p = random<double>({3, 7}, 13);
  auto   q = random<double>({3, 7}, 33);
  double ref = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) ref += std::abs(p.data()[i] - q.data()[i]);
  EXPECT_NEAR(l1_mean(tape, p, q).item(), ref / 21.0, 1e-7);
  EXPECT_THROW(l1_mean(tape, p, t), ShapeError);
}

TEST(L1Mean, ZeroSubgradientAtTies)
{
  auto         p = Tensor<double>({2}, {1.0, 2.0}, true);
  auto         t = Tensor<double>({2}, {1.0, 0.0});
  Tape<double> tape;
  tape.backward(l1_mean(tape, p, t));
  EXPECT_EQ(p.grad()[0], 0.0);
  EXPECT_EQ(p.grad()[1], 0.5);
}

TEST(Backward, SumGivesOnesAndNonScalarIsContractError)
{
  auto         x = random<double>({2, 3}, 14, true);
  Tape<double> tape;
  auto         doubled = scale(tape, x, 2.0);
  EXPECT_THROW(tape.backward(doubled), ContractError);
  auto const visited = tape.backward(sum(tape, x));
  EXPECT_EQ(visited, tape.size());
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, ThreeOpChainMatchesFiniteDifferences)
{
  auto x = random<double>({1, 2, 4, 4}, 15, true);
  auto k = random<double>({2, 2, 3, 3}, 16, true);
  auto target = random<double>({1, 2, 4, 4}, 17);
  ScalarFunction<double> f = [&](Tape<double> &tape) {
    return l1_mean(tape, madun::tanh(tape, conv2d(tape, sigmoid(tape, x), k)), target);
  };
  auto report = grad_check(f, {x, k});
  EXPECT_TRUE(report.passed) << report.max_error;
  EXPECT_LT(report.max_error, 1e-4);
}

TEST(Backward, SharedParameterAccumulatesBothPaths)
{
  auto         w = Tensor<double>::scalar(0.7, true);
  auto         x = random<double>({5}, 18);
  Tape<double> tape;
  // loss = sum(w*x) + sum(w*w*x) -> dL/dw = sum(x) + 2w sum(x)
  auto const a = scale_by(tape, x, w);
  auto const b = scale_by(tape, scale_by(tape, x, w), w);
  tape.backward(add(tape, sum(tape, a), sum(tape, b)));
  double sx = 0;
  for (double v : x.data()) sx += v;
  EXPECT_NEAR(w.grad()[0], sx + 2 * 0.7 * sx, 1e-12);

  ScalarFunction<double> f = [&](Tape<double> &t) {
    return add(t, sum(t, scale_by(t, x, w)), sum(t, scale_by(t, scale_by(t, x, w), w)));
  };
  EXPECT_TRUE(grad_check(f, w).passed);
}

TEST(Backward, DeterministicAndZeroGradMatchesFreshTape)
{
  auto x = random<double>({1, 3, 6, 6}, 19, true);
  auto k = random<double>({3, 3, 3, 3}, 20, true);
  Tape<double> tape;
  auto         loss = sum(tape, relu(tape, conv2d(tape, x, k)));
  tape.backward(loss);
  std::vector<double> const first(k.grad().begin(), k.grad().end());
  k.zero_grad();
  x.zero_grad();
  tape.backward(loss);
  std::vector<double> second(k.grad().begin(), k.grad().end());
  EXPECT_EQ(first, second);

  k.zero_grad();
  Tape<double> fresh;
  fresh.backward(sum(fresh, relu(fresh, conv2d(fresh, x, k))));
  EXPECT_EQ(first, std::vector<double>(k.grad().begin(), k.grad().end()));
}

TEST(GradCheck, EveryPrimitivePasses)
{
  auto a = random<double>({1, 2, 4, 4}, 21, true);
  auto b = random<double>({1, 2, 4, 4}, 22, true);
  auto k = random<double>({3, 2, 3, 3}, 23, true);
  auto bias = random<double>({3}, 24, true);
  auto s = Tensor<double>::scalar(0.8, true);
  auto M = random<double>({3, 32}, 25, true);
  auto v = random<double>({2, 32}, 26, true);
  auto u = random<double>({2, 3}, 27, true);
  auto t = random<double>({1, 2, 4, 4}, 28);

  std::vector<std::pair<char const *, ScalarFunction<double>>> cases{
    {"conv2d", [&](Tape<double> &tp) { return sum(tp, hadamard(tp, conv2d(tp, a, k, bias), conv2d(tp, a, k, bias))); }},
    {"relu", [&](Tape<double> &tp) { return sum(tp, hadamard(tp, relu(tp, a), b)); }},
    {"sigmoid", [&](Tape<double> &tp) { return sum(tp, hadamard(tp, sigmoid(tp, a), b)); }},
    {"tanh", [&](Tape<double> &tp) { return sum(tp, hadamard(tp, madun::tanh(tp, a), b)); }},
    {"add", [&](Tape<double> &tp) { return sum(tp, hadamard(tp, add(tp, a, b), a)); }},
    {"sub", [&](Tape<double> &tp) { return sum(tp, hadamard(tp, sub(tp, a, b), a)); }},
    {"hadamard", [&](Tape<double> &tp) { return sum(tp, hadamard(tp, a, b)); }},
    {"scale", [&](Tape<double> &tp) { return sum(tp, hadamard(tp, scale(tp, a, -1.5), a)); }},
    {"scale_by", [&](Tape<double> &tp) { return sum(tp, hadamard(tp, scale_by(tp, a, s), b)); }},
    {"concat", [&](Tape<double> &tp) { return sum(tp, conv2d(tp, concat_channels(tp, a, b), random<double>({1, 4, 3, 3}, 29))); }},
    {"matvec", [&](Tape<double> &tp) { return sum(tp, hadamard(tp, matvec(tp, M, v), u)); }},
    {"matvec_transposed", [&](Tape<double> &tp) { return sum(tp, hadamard(tp, matvec_transposed(tp, M, u), v)); }},
    {"reshape", [&](Tape<double> &tp) { return sum(tp, hadamard(tp, reshape(tp, a, {2, 16}), reshape(tp, b, {2, 16}))); }},
    {"l1_mean", [&](Tape<double> &tp) { return l1_mean(tp, a, t); }},
  };
  for (auto const &[name, f] : cases) {
    auto report = grad_check(f, {a, b, k, bias, s, M, v, u});
    EXPECT_TRUE(report.passed) << name << " max error " << report.max_error;
  }
}

TEST(GradCheck, QuadraticIsExact)
{
  auto                   x = random<double>({7}, 30, false, -3, 3);
  ScalarFunction<double> f = [&](Tape<double> &t) { return scale(t, sum(t, hadamard(t, x, x)), 0.5); };
  auto report = grad_check(f, x);
  EXPECT_TRUE(report.passed);
  EXPECT_LT(report.max_error, 1e-8);
}

TEST(GradCheck, CorruptedBackwardFails)
{
  auto x = random<double>({6}, 31, true);
  // y = 3x with a backward rule claiming dy/dx = 2
  auto broken = [](Tape<double> &tape, Tensor<double> const &in) {
    Tensor<double> out(in.shape());
    for (std::size_t i = 0; i < in.numel(); ++i) out.data()[i] = 3 * in.data()[i];
    if (tape.wants({&in})) {
      tape.record(out, [in = in, out]() mutable {
        for (std::size_t i = 0; i < in.numel(); ++i) in.grad()[i] += 2 * out.grad()[i];
      });
    }
    return out;
  };
  ScalarFunction<double> f = [&](Tape<double> &t) { return sum(t, broken(t, x)); };
  EXPECT_FALSE(grad_check(f, x).passed);
}

TEST(GradCheck, NonDeterministicFunctionIsContractError)
{
  auto                   x = random<double>({3}, 32);
  int                    calls = 0;
  ScalarFunction<double> f = [&](Tape<double> &t) { return scale(t, sum(t, x), static_cast<double>(++calls)); };
  EXPECT_THROW(grad_check(f, x), ContractError);
}
