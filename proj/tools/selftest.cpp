#include "cli.hpp"

#include "madun/analysis.hpp"
#include "madun/grad_check.hpp"
#include "madun/metrics.hpp"
#include "madun/ops.hpp"

#include <cmath>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <functional>
#include <random>

namespace madun::cli {

namespace {

using D = double;

Tensor<D> random_tensor(Shape shape, std::uint64_t seed, bool grad = false, double lo = -1, double hi = 1)
{
  std::mt19937_64                        rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<D>                              t(std::move(shape), grad);
  for (auto &v : t.data()) v = u(rng);
  return t;
}

double dot(std::span<D const> a, std::span<D const> b)
{
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Each check returns an empty string on success or a short reason.
using Check = std::function<std::string()>;

std::string conv_against_loops()
{
  auto const x = random_tensor({1, 2, 5, 6}, 1), k = random_tensor({3, 2, 3, 3}, 2), b = random_tensor({3}, 3);
  auto       tape = Tape<D>::inference();
  auto const y = conv2d(tape, x, k, b);
  double     worst = 0;
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 6; ++c) {
        double acc = b.data()[o];
        for (std::size_t i = 0; i < 2; ++i)
          for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
              auto const rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
              if (rr < 0 || rr >= 5 || cc < 0 || cc >= 6) continue;
              acc += k.data()[((o * 2 + i) * 3 + (dr + 1)) * 3 + (dc + 1)] * x.data()[(i * 5 + rr) * 6 + cc];
            }
        worst = std::max(worst, std::abs(acc - y.data()[(o * 5 + r) * 6 + c]));
      }
  return worst < 1e-12 ? "" : fmt::format("max deviation {:.3g}", worst);
}

std::string primitive_gradients()
{
  auto const x = random_tensor({1, 2, 4, 4}, 4, true), k = random_tensor({2, 2, 3, 3}, 5, true);
  auto const target = random_tensor({1, 2, 4, 4}, 6);
  auto const report = grad_check<D>(
    [&](Tape<D> &tape) {
      auto h = conv2d(tape, x, k);
      h = add(tape, sigmoid(tape, h), tanh(tape, scale(tape, h, D(0.5))));
      return l1_mean(tape, hadamard(tape, h, h), target);
    },
    std::vector{x, k});
  return report.passed ? "" : fmt::format("max relative error {:.3g}", report.max_error);
}

std::string gaussian_operator()
{
  auto const op = GaussianOperator<D>::build(0.25, 1089, 7);
  if (op.orthonormality_error() > 1e-5) { return fmt::format("orthonormality {:.3g}", op.orthonormality_error()); }
  auto       tape = Tape<D>::inference();
  auto const x = random_tensor({1089}, 8), y = random_tensor({op.m()}, 9);
  double const lhs = dot(op.sample(tape, x).data(), y.data()), rhs = dot(x.data(), op.adjoint(tape, y).data());
  return std::abs(lhs - rhs) <= 1e-6 * std::abs(lhs) ? "" : fmt::format("adjointness {} vs {}", lhs, rhs);
}

std::string mri_operator()
{
  Tensor<D> mask({12, 12});
  std::mt19937_64 rng(3);
  for (auto &v : mask.data()) v = (rng() % 3 == 0) ? 1 : 0;
  MriOperator<D> const op(mask);
  auto                 tape = Tape<D>::inference();
  auto const           x = random_tensor({12, 12}, 10), k = random_tensor({12, 12, 2}, 11);
  double const lhs = dot(op.forward(tape, x).data(), k.data()), rhs = dot(x.data(), op.adjoint(tape, k).data());
  return std::abs(lhs - rhs) <= 1e-6 * std::abs(lhs) ? "" : fmt::format("adjointness {} vs {}", lhs, rhs);
}

std::string zero_weight_lstm()
{
  ConvLstmParams<D> p;
  for (auto *w : {&p.w_si, &p.w_hi, &p.w_sf, &p.w_hf, &p.w_sc, &p.w_hc, &p.w_so, &p.w_ho}) *w = Tensor<D>({2, 2, 3, 3});
  for (auto *b : {&p.b_i, &p.b_f, &p.b_c, &p.b_o}) *b = Tensor<D>({2});
  auto       tape = Tape<D>::inference();
  auto const c_prev = random_tensor({1, 2, 4, 4}, 12);
  auto const [h, c] = conv_lstm_cell(tape, random_tensor({1, 2, 4, 4}, 13), random_tensor({1, 2, 4, 4}, 14), c_prev, p);
  for (std::size_t i = 0; i < c.numel(); ++i) {
    double const ce = 0.5 * c_prev.data()[i];
    if (c.data()[i] != ce || h.data()[i] != 0.5 * std::tanh(ce)) { return fmt::format("mismatch at {}", i); }
  }
  return "";
}

std::string model_gradients()
{
  ModelConfig config;
  config.stages = 2;
  config.channels = 2;
  auto const            params = init_params<D>(config, 1);
  BlockSampler<D> const op(GaussianOperator<D>::build(0.25, 81, 2), 9, 9, 9);
  auto const            x = random_tensor({1, 1, 9, 9}, 15, false, 0, 1);
  std::vector<Tensor<D>> points;
  for (auto &[name, t] : params.named()) points.push_back(t);
  auto const report = grad_check<D>(
    [&](Tape<D> &tape) { return l1_mean(tape, model_forward(tape, op.measure(tape, x), op, params).output, x); },
    points);
  return report.passed ? "" : fmt::format("max relative error {:.3g}", report.max_error);
}

std::string fold_roundtrip()
{
  auto const image = random_tensor({99, 99}, 16, false, 0, 255);
  for (std::size_t stride : {11, 22, 33}) {
    BlockGrid  grid;
    auto const blocks = extract_blocks(image, 33, stride, &grid);
    auto const back = fold_average(blocks, grid);
    for (std::size_t i = 0; i < image.numel(); ++i) {
      if (std::abs(back.data()[i] - image.data()[i]) > 1e-6) { return fmt::format("stride {} pixel {}", stride, i); }
    }
  }
  return "";
}

std::string metrics()
{
  auto const a = random_tensor({32, 32}, 17, false, 0, 200);
  auto       b = a.clone();
  for (auto &v : b.data()) v += 16;
  double const p = psnr(a, b), s = ssim(a, a);
  if (std::abs(p - 24.0486) > 1e-3) { return fmt::format("psnr {}", p); }
  return std::abs(s - 1.0) < 1e-12 ? "" : fmt::format("ssim(x,x) {}", s);
}

std::string spectrum()
{
  auto const   t = random_tensor({1, 3, 16, 16}, 18);
  double const e = dot(t.data(), t.data());
  double const got = spectral_density(t).energy();
  return std::abs(got - e) <= 1e-5 * e ? "" : fmt::format("energy {} vs {}", got, e);
}

} // namespace

int selftest(std::ostream &out)
{
  std::pair<char const *, Check> const checks[] = {
    {"conv2d matches direct loops", conv_against_loops},
    {"primitive gradients", primitive_gradients},
    {"gaussian operator orthonormal and adjoint", gaussian_operator},
    {"mri operator adjoint", mri_operator},
    {"zero-weight convlstm cell", zero_weight_lstm},
    {"end-to-end model gradients", model_gradients},
    {"block fold roundtrip", fold_roundtrip},
    {"psnr and ssim closed forms", metrics},
    {"spectral energy conservation", spectrum},
  };
  int failed = 0;
  for (auto const &[name, check] : checks) {
    std::string reason;
    try {
      reason = check();
    } catch (std::exception const &e) {
      reason = e.what();
    }
    if (reason.empty()) {
      fmt::print(out, "ok    {}\n", name);
    } else {
      ++failed;
      fmt::print(out, "FAIL  {}: {}\n", name, reason);
    }
  }
  auto const total = static_cast<int>(std::size(checks));
  fmt::print(out, "selftest: {}/{} checks passed\n", total - failed, total);
  return failed;
}

} // namespace madun::cli
