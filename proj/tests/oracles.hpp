#pragma once

// Independent reference implementations used only by the tests. Nothing here
// calls into the library's numeric paths.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

namespace oracle {

// Plain nested-loop same-padded cross-correlation.
// in [N][Cin][H][W], k [Cout][Cin][kh][kw] flattened row-major.
inline std::vector<double> conv2d(std::vector<double> const &in, std::size_t N, std::size_t Cin, std::size_t H,
                                  std::size_t W, std::vector<double> const &k, std::size_t Cout, std::size_t kh,
                                  std::size_t kw, std::vector<double> const &bias = {})
{
  std::vector<double> out(N * Cout * H * W, 0.0);
  long const          ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t co = 0; co < Cout; ++co)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < Cin; ++ci)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                long const sy = static_cast<long>(y) + static_cast<long>(ky) - ph;
                long const sx = static_cast<long>(x) + static_cast<long>(kx) - pw;
                if (sy < 0 || sx < 0 || sy >= static_cast<long>(H) || sx >= static_cast<long>(W)) continue;
                acc += in[((n * Cin + ci) * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)] *
                       k[((co * Cin + ci) * kh + ky) * kw + kx];
              }
          out[((n * Cout + co) * H + y) * W + x] = acc;
        }
  return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct LstmWeights
{
  // each gate: kernel on s, kernel on h, bias. Order i, f, c, o.
  std::vector<double> ws[4], wh[4], b[4];
};

// One ConvLSTM step evaluated pixel by pixel with scalar loops.
inline void conv_lstm(std::vector<double> const &s, std::vector<double> const &h_prev, std::vector<double> const &c_prev,
                      std::size_t C, std::size_t H, std::size_t W, LstmWeights const &w, std::vector<double> &h,
                      std::vector<double> &c)
{
  std::vector<double> pre[4];
  for (int g = 0; g < 4; ++g) {
    auto const a = conv2d(s, 1, C, H, W, w.ws[g], C, 3, 3, w.b[g]);
    auto const b = conv2d(h_prev, 1, C, H, W, w.wh[g], C, 3, 3);
    pre[g].resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) pre[g][i] = a[i] + b[i];
  }
  h.assign(s.size(), 0.0);
  c.assign(s.size(), 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    double const ig = sigmoid(pre[0][i]);
    double const fg = sigmoid(pre[1][i]);
    double const cg = std::tanh(pre[2][i]);
    double const og = sigmoid(pre[3][i]);
    c[i] = fg * c_prev[i] + ig * cg;
    h[i] = og * std::tanh(c[i]);
  }
}

// Mean SSIM over all valid 11x11 windows, each window's weighted statistics
// summed directly from the 2-D Gaussian weights.
inline double ssim(std::vector<double> const &a, std::vector<double> const &b, std::size_t H, std::size_t W)
{
  int const    R = 5;
  double const sigma = 1.5;
  double       w[11][11];
  double       total = 0;
  for (int i = -R; i <= R; ++i)
    for (int j = -R; j <= R; ++j) {
      w[i + R][j + R] = std::exp(-(i * i + j * j) / (2 * sigma * sigma));
      total += w[i + R][j + R];
    }
  for (auto &row : w)
    for (double &v : row) v /= total;
  double const c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  double       acc = 0;
  std::size_t  count = 0;
  for (std::size_t y = R; y + R < H; ++y)
    for (std::size_t x = R; x + R < W; ++x) {
      double ma = 0, mb = 0;
      for (int i = -R; i <= R; ++i)
        for (int j = -R; j <= R; ++j) {
          std::size_t const idx = (y + i) * W + (x + j);
          ma += w[i + R][j + R] * a[idx];
          mb += w[i + R][j + R] * b[idx];
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = -R; i <= R; ++i)
        for (int j = -R; j <= R; ++j) {
          std::size_t const idx = (y + i) * W + (x + j);
          va += w[i + R][j + R] * (a[idx] - ma) * (a[idx] - ma);
          vb += w[i + R][j + R] * (b[idx] - mb) * (b[idx] - mb);
          cov += w[i + R][j + R] * (a[idx] - ma) * (b[idx] - mb);
        }
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return acc / static_cast<double>(count);
}

// Scalar Adam, one parameter.
struct ScalarAdam
{
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0;
  int    t = 0;
  double step(double p, double g)
  {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double const mh = m / (1 - std::pow(b1, t));
    double const vh = v / (1 - std::pow(b2, t));
    return p - lr * mh / (std::sqrt(vh) + eps);
  }
};

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0)
{
  std::mt19937_64                        rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double>                    v(n);
  for (double &x : v) x = u(rng);
  return v;
}

} // namespace oracle
