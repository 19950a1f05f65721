#pragma once

#include "madun/tensor.hpp"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace testutil {

template <typename T> madun::Tensor<T> tensor(madun::Shape shape, std::vector<double> const &values, bool grad = false)
{
  return madun::Tensor<T>(std::move(shape), std::vector<T>(values.begin(), values.end()), grad);
}

template <typename T> madun::Tensor<T> random(madun::Shape shape, std::uint64_t seed, bool grad = false, double lo = -1,
                                              double hi = 1)
{
  auto const n = madun::numel(shape);
  return tensor<T>(std::move(shape), oracle::random_vector(n, seed, lo, hi), grad);
}

template <typename T> std::vector<double> values(madun::Tensor<T> const &t)
{
  return std::vector<double>(t.data().begin(), t.data().end());
}

// Smooth synthetic luminance image in [0, 255]: a gradient, a few Gaussian
// blobs and one soft edge.
inline std::vector<double> synthetic_image(std::size_t H, std::size_t W, std::uint64_t seed)
{
  std::mt19937_64                        rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double const                           gx = u(rng) - 0.5, gy = u(rng) - 0.5;
  struct Blob { double cy, cx, s, a; };
  std::vector<Blob> blobs;
  for (int i = 0; i < 4; ++i) {
    blobs.push_back({u(rng) * H, u(rng) * W, 3.0 + u(rng) * 0.25 * static_cast<double>(std::min(H, W)),
                     (u(rng) - 0.5) * 160.0});
  }
  double const ea = u(rng) * 6.283, eo = (u(rng) - 0.5) * 0.5 * static_cast<double>(std::min(H, W));
  std::vector<double> img(H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double const yy = static_cast<double>(y) - 0.5 * static_cast<double>(H);
      double const xx = static_cast<double>(x) - 0.5 * static_cast<double>(W);
      double       v = 128.0 + 60.0 * (gx * xx + gy * yy) / static_cast<double>(std::max(H, W));
      for (auto const &b : blobs) {
        double const d2 = (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
        v += b.a * std::exp(-d2 / (2 * b.s * b.s));
      }
      double const side = std::cos(ea) * xx + std::sin(ea) * yy - eo;
      v += 30.0 * std::tanh(side / 2.0);
      img[y * W + x] = std::clamp(std::round(v), 0.0, 255.0);
    }
  return img;
}

inline std::filesystem::path temp_dir(std::string const &name)
{
  auto dir = std::filesystem::temp_directory_path() / ("madun_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace testutil
