#include "madun/cs_ops.hpp"

#include "madun/error.hpp"
#include "madun/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <random>

namespace madun {

// ---------------------------------------------------------------- Gaussian

template <typename T> GaussianOperator<T> GaussianOperator<T>::build(double ratio, std::size_t n, std::uint64_t seed)
{
  if (!(ratio > 0.0 && ratio <= 1.0)) { throw ConfigError(fmt::format("CS ratio {} outside (0, 1]", ratio)); }
  if (n < 1) { throw ConfigError("sampling operator needs n >= 1"); }
  auto const m = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n))));

  std::mt19937_64                  rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Columns of `basis` are the rows of phi before orthonormalization.
  Eigen::MatrixXd basis(n, m);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      basis(c, r) = normal(rng);
    }
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(basis);
  Eigen::MatrixXd const q = qr.householderQ() * Eigen::MatrixXd::Identity(n, m);

  Tensor<T> phi({m, n});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      phi.data()[r * n + c] = static_cast<T>(q(c, r));
    }
  }
  GaussianOperator op;
  op.phi_ = std::move(phi);
  op.ratio_ = ratio;
  op.seed_ = seed;
  return op;
}

template <typename T>
GaussianOperator<T> GaussianOperator<T>::from_matrix(Tensor<T> phi, double ratio, std::uint64_t seed)
{
  if (phi.rank() != 2 || phi.dim(0) == 0 || phi.dim(1) == 0) {
    throw ShapeError(fmt::format("sampling matrix must be a non-empty [M,N], got {}", to_string(phi.shape())));
  }
  GaussianOperator op;
  op.ratio_ = ratio > 0.0 ? ratio : static_cast<double>(phi.dim(0)) / static_cast<double>(phi.dim(1));
  op.seed_ = seed;
  op.phi_ = std::move(phi);
  return op;
}

template <typename T> Tensor<T> GaussianOperator<T>::sample(Tape<T> &tape, Tensor<T> const &x) const
{
  if (x.rank() == 1) { return matvec(tape, phi_, x); }
  if (x.rank() == 0 || x.numel() != x.dim(0) * n()) {
    throw ShapeError(fmt::format("sample: input {} does not hold rows of {} values", to_string(x.shape()), n()));
  }
  if (x.rank() == 2) { return matvec(tape, phi_, x); }
  return matvec(tape, phi_, reshape(tape, x, {x.dim(0), n()}));
}

template <typename T> Tensor<T> GaussianOperator<T>::adjoint(Tape<T> &tape, Tensor<T> const &y) const
{
  return matvec_transposed(tape, phi_, y);
}

template <typename T> double GaussianOperator<T>::orthonormality_error() const
{
  std::size_t const M = m(), N = n();
  double            worst = 0.0;
  auto const        p = phi_.data();
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < N; ++k) {
        dot += static_cast<double>(p[i * N + k]) * static_cast<double>(p[j * N + k]);
      }
      worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

// --------------------------------------------------------------------- DFT

namespace {

bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

// Unitary 1-D DFT of `n` values spaced `step` apart.
void dft1d(std::complex<double> *data, std::size_t n, std::size_t step, bool inverse,
           std::vector<std::complex<double>> &scratch)
{
  double const sign = inverse ? 1.0 : -1.0;
  double const norm = 1.0 / std::sqrt(static_cast<double>(n));
  scratch.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    scratch[i] = data[i * step];
  }
  if (is_power_of_two(n)) {
    for (std::size_t i = 1, j = 0; i < n; ++i) {
      std::size_t bit = n >> 1;
      for (; j & bit; bit >>= 1) {
        j ^= bit;
      }
      j ^= bit;
      if (i < j) { std::swap(scratch[i], scratch[j]); }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      double const angle = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
      for (std::size_t start = 0; start < n; start += len) {
        for (std::size_t k = 0; k < len / 2; ++k) {
          auto const w = std::polar(1.0, angle * static_cast<double>(k));
          auto const a = scratch[start + k];
          auto const b = scratch[start + k + len / 2] * w;
          scratch[start + k] = a + b;
          scratch[start + k + len / 2] = a - b;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      data[i * step] = scratch[i] * norm;
    }
    return;
  }
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      auto const phase = sign * 2.0 * std::numbers::pi * static_cast<double>((k * j) % n) / static_cast<double>(n);
      acc += scratch[j] * std::polar(1.0, phase);
    }
    data[k * step] = acc * norm;
  }
}

} // namespace

Dft2d::Dft2d(std::size_t height, std::size_t width)
  : height_{height}
  , width_{width}
{
  if (height == 0 || width == 0) { throw ShapeError("DFT of an empty plane"); }
}

void Dft2d::forward(std::span<std::complex<double>> plane) const { transform(plane, false); }
void Dft2d::inverse(std::span<std::complex<double>> plane) const { transform(plane, true); }

void Dft2d::transform(std::span<std::complex<double>> plane, bool inverse) const
{
  if (plane.size() != height_ * width_) {
    throw ShapeError(fmt::format("DFT plane of {} values, expected {}x{}", plane.size(), height_, width_));
  }
  std::vector<std::complex<double>> scratch;
  for (std::size_t y = 0; y < height_; ++y) {
    dft1d(plane.data() + y * width_, width_, 1, inverse, scratch);
  }
  for (std::size_t x = 0; x < width_; ++x) {
    dft1d(plane.data() + x, height_, width_, inverse, scratch);
  }
}

// --------------------------------------------------------------------- MRI

template <typename T>
MriOperator<T>::MriOperator(Tensor<T> mask)
  : mask_{std::move(mask)}
{
  if (mask_.rank() != 2) { throw ShapeError(fmt::format("MRI mask must be [H,W], got {}", to_string(mask_.shape()))); }
  for (T &v : mask_.data()) {
    v = v != T(0) ? T(1) : T(0);
  }
  dft_ = std::make_shared<Dft2d>(mask_.dim(0), mask_.dim(1));
}

template <typename T> double MriOperator<T>::sampling_ratio() const
{
  double kept = 0;
  for (T v : mask_.data()) {
    kept += static_cast<double>(v);
  }
  return kept / static_cast<double>(mask_.numel());
}

namespace {

template <typename T>
void mri_forward_raw(Dft2d const &dft, std::span<T const> mask, std::span<T const> x, std::span<T> k, bool add)
{
  std::size_t const                 plane = mask.size();
  std::vector<std::complex<double>> buf(plane);
  for (std::size_t p = 0; p < x.size() / plane; ++p) {
    for (std::size_t i = 0; i < plane; ++i) {
      buf[i] = static_cast<double>(x[p * plane + i]);
    }
    dft.forward(buf);
    for (std::size_t i = 0; i < plane; ++i) {
      auto const v = buf[i] * static_cast<double>(mask[i]);
      T         *dst = k.data() + 2 * (p * plane + i);
      if (add) {
        dst[0] += static_cast<T>(v.real());
        dst[1] += static_cast<T>(v.imag());
      } else {
        dst[0] = static_cast<T>(v.real());
        dst[1] = static_cast<T>(v.imag());
      }
    }
  }
}

template <typename T>
void mri_adjoint_raw(Dft2d const &dft, std::span<T const> mask, std::span<T const> k, std::span<T> x, bool add)
{
  std::size_t const                 plane = mask.size();
  std::vector<std::complex<double>> buf(plane);
  for (std::size_t p = 0; p < x.size() / plane; ++p) {
    for (std::size_t i = 0; i < plane; ++i) {
      T const *src = k.data() + 2 * (p * plane + i);
      buf[i] = std::complex<double>(src[0], src[1]) * static_cast<double>(mask[i]);
    }
    dft.inverse(buf);
    for (std::size_t i = 0; i < plane; ++i) {
      if (add) {
        x[p * plane + i] += static_cast<T>(buf[i].real());
      } else {
        x[p * plane + i] = static_cast<T>(buf[i].real());
      }
    }
  }
}

} // namespace

template <typename T> Tensor<T> MriOperator<T>::forward(Tape<T> &tape, Tensor<T> const &x) const
{
  auto const &s = x.shape();
  if (s.size() < 2 || s[s.size() - 2] != height() || s.back() != width()) {
    throw ShapeError(
      fmt::format("mri_forward: image {} does not match mask {}", to_string(s), to_string(mask_.shape())));
  }
  Shape out_shape = s;
  out_shape.push_back(2);
  Tensor<T> out(out_shape);
  mri_forward_raw<T>(*dft_, mask_.data(), x.data(), out.data(), false);
  if (tape.wants({&x})) {
    tape.record(out, [x = x, out, mask = mask_, dft = dft_]() mutable {
      mri_adjoint_raw<T>(*dft, mask.data(), std::span<T const>{out.grad()}, x.grad(), true);
    });
  }
  return out;
}

template <typename T> Tensor<T> MriOperator<T>::adjoint(Tape<T> &tape, Tensor<T> const &k) const
{
  auto const &s = k.shape();
  if (s.size() < 3 || s.back() != 2 || s[s.size() - 3] != height() || s[s.size() - 2] != width()) {
    throw ShapeError(
      fmt::format("mri_adjoint: k-space {} does not match mask {}", to_string(s), to_string(mask_.shape())));
  }
  Shape out_shape(s.begin(), s.end() - 1);
  Tensor<T> out(out_shape);
  mri_adjoint_raw<T>(*dft_, mask_.data(), k.data(), out.data(), false);
  if (tape.wants({&k})) {
    tape.record(out, [k = k, out, mask = mask_, dft = dft_]() mutable {
      mri_forward_raw<T>(*dft, mask.data(), std::span<T const>{out.grad()}, k.grad(), true);
    });
  }
  return out;
}

// ------------------------------------------------------------------ Blocks

namespace {

std::vector<std::size_t> anchors(std::size_t extent, std::size_t block, std::size_t stride)
{
  std::vector<std::size_t> a;
  for (std::size_t p = 0; p + block <= extent; p += stride) {
    a.push_back(p);
  }
  if (a.back() + block < extent) { a.push_back(extent - block); }
  return a;
}

} // namespace

BlockGrid make_block_grid(std::size_t height, std::size_t width, std::size_t block, std::size_t stride)
{
  if (block == 0 || stride == 0) { throw ConfigError("block size and stride must be positive"); }
  if (block > height || block > width) {
    throw ConfigError(fmt::format("block size {} exceeds image {}x{}", block, height, width));
  }
  BlockGrid g;
  g.block = block;
  g.stride = stride;
  g.height = height;
  g.width = width;
  g.row_anchors = anchors(height, block, stride);
  g.col_anchors = anchors(width, block, stride);
  g.overlap.assign(height * width, 0);
  for (auto r : g.row_anchors) {
    for (auto c : g.col_anchors) {
      for (std::size_t y = 0; y < block; ++y) {
        for (std::size_t x = 0; x < block; ++x) {
          ++g.overlap[(r + y) * width + c + x];
        }
      }
    }
  }
  return g;
}

namespace {

// Copies every block of `image` (H*W values) into `blocks` (count*b*b values).
template <typename T> void gather_blocks(BlockGrid const &g, T const *image, T *blocks)
{
  std::size_t const b = g.block;
  for (std::size_t bi = 0; bi < g.row_anchors.size(); ++bi) {
    for (std::size_t bj = 0; bj < g.col_anchors.size(); ++bj) {
      T *dst = blocks + (bi * g.col_anchors.size() + bj) * b * b;
      for (std::size_t y = 0; y < b; ++y) {
        T const *src = image + (g.row_anchors[bi] + y) * g.width + g.col_anchors[bj];
        std::copy_n(src, b, dst + y * b);
      }
    }
  }
}

// Adds every block into `image`, each pixel weighted by 1 / overlap.
template <typename T> void scatter_average(BlockGrid const &g, T const *blocks, T *image)
{
  std::size_t const b = g.block;
  for (std::size_t bi = 0; bi < g.row_anchors.size(); ++bi) {
    for (std::size_t bj = 0; bj < g.col_anchors.size(); ++bj) {
      T const *src = blocks + (bi * g.col_anchors.size() + bj) * b * b;
      for (std::size_t y = 0; y < b; ++y) {
        std::size_t const row = (g.row_anchors[bi] + y) * g.width + g.col_anchors[bj];
        for (std::size_t x = 0; x < b; ++x) {
          image[row + x] += src[y * b + x] / static_cast<T>(g.overlap[row + x]);
        }
      }
    }
  }
}

} // namespace

template <typename T>
std::vector<Tensor<T>> extract_blocks(Tensor<T> const &image, std::size_t block, std::size_t stride, BlockGrid *grid)
{
  if (image.rank() != 2) {
    throw ShapeError(fmt::format("extract_blocks: image must be [H,W], got {}", to_string(image.shape())));
  }
  auto const     g = make_block_grid(image.dim(0), image.dim(1), block, stride);
  std::vector<T> flat(g.count() * block * block);
  gather_blocks(g, image.ptr(), flat.data());
  std::vector<Tensor<T>> blocks;
  for (std::size_t i = 0; i < g.count(); ++i) {
    auto const first = flat.begin() + static_cast<std::ptrdiff_t>(i * block * block);
    blocks.emplace_back(Shape{block, block}, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(block * block)));
  }
  if (grid) { *grid = g; }
  return blocks;
}

template <typename T> Tensor<T> fold_average(std::vector<Tensor<T>> const &blocks, BlockGrid const &grid)
{
  if (blocks.size() != grid.count()) {
    throw ContractError(fmt::format("fold_average: {} blocks for a grid of {}", blocks.size(), grid.count()));
  }
  std::size_t const b = grid.block;
  std::vector<T>    flat(blocks.size() * b * b);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].shape() != Shape{b, b}) {
      throw ContractError(fmt::format("fold_average: block {} has shape {}", i, to_string(blocks[i].shape())));
    }
    std::copy(blocks[i].data().begin(), blocks[i].data().end(), flat.begin() + static_cast<std::ptrdiff_t>(i * b * b));
  }
  Tensor<T> image({grid.height, grid.width});
  scatter_average(grid, flat.data(), image.ptr());
  return image;
}

template <typename T> Tensor<T> unfold(Tape<T> &tape, Tensor<T> const &images, BlockGrid const &grid)
{
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != grid.height || images.dim(3) != grid.width) {
    throw ShapeError(fmt::format("unfold: images {} do not match a {}x{} grid", to_string(images.shape()),
                                 grid.height, grid.width));
  }
  std::size_t const N = images.dim(0), per = grid.count(), b = grid.block, plane = grid.height * grid.width;
  Tensor<T>         out({N * per, 1, b, b});
  for (std::size_t n = 0; n < N; ++n) {
    gather_blocks(grid, images.ptr() + n * plane, out.ptr() + n * per * b * b);
  }
  if (tape.wants({&images})) {
    tape.record(out, [images = images, out, grid, N, per, b, plane]() mutable {
      auto gi = images.grad();
      auto go = out.grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t bi = 0; bi < grid.row_anchors.size(); ++bi) {
          for (std::size_t bj = 0; bj < grid.col_anchors.size(); ++bj) {
            T const *src = go.data() + (n * per + bi * grid.col_anchors.size() + bj) * b * b;
            for (std::size_t y = 0; y < b; ++y) {
              T *dst = gi.data() + n * plane + (grid.row_anchors[bi] + y) * grid.width + grid.col_anchors[bj];
              for (std::size_t x = 0; x < b; ++x) {
                dst[x] += src[y * b + x];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T> Tensor<T> fold(Tape<T> &tape, Tensor<T> const &blocks, BlockGrid const &grid)
{
  std::size_t const per = grid.count(), b = grid.block, plane = grid.height * grid.width;
  if (blocks.rank() != 4 || blocks.dim(1) != 1 || blocks.dim(2) != b || blocks.dim(3) != b ||
      blocks.dim(0) % per != 0) {
    throw ShapeError(fmt::format("fold: blocks {} do not match a grid of {} blocks of {}", to_string(blocks.shape()),
                                 per, b));
  }
  std::size_t const N = blocks.dim(0) / per;
  Tensor<T>         out({N, 1, grid.height, grid.width});
  for (std::size_t n = 0; n < N; ++n) {
    scatter_average(grid, blocks.ptr() + n * per * b * b, out.ptr() + n * plane);
  }
  if (tape.wants({&blocks})) {
    tape.record(out, [blocks = blocks, out, grid, N, per, b, plane]() mutable {
      auto gb = blocks.grad();
      auto go = out.grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t bi = 0; bi < grid.row_anchors.size(); ++bi) {
          for (std::size_t bj = 0; bj < grid.col_anchors.size(); ++bj) {
            T *dst = gb.data() + (n * per + bi * grid.col_anchors.size() + bj) * b * b;
            for (std::size_t y = 0; y < b; ++y) {
              std::size_t const row = (grid.row_anchors[bi] + y) * grid.width + grid.col_anchors[bj];
              for (std::size_t x = 0; x < b; ++x) {
                dst[y * b + x] += go[n * plane + row + x] / static_cast<T>(grid.overlap[row + x]);
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T> Tensor<T> augment(Tensor<T> const &block, std::size_t index)
{
  if (index > 7) { throw ConfigError(fmt::format("augmentation index {} outside 0..7", index)); }
  if (block.rank() != 2 || block.dim(0) != block.dim(1)) {
    throw ShapeError(fmt::format("augment: block must be square, got {}", to_string(block.shape())));
  }
  std::size_t const n = block.dim(0);
  Tensor<T>         out = block.clone();
  out.set_requires_grad(false);
  if (index >= 4) {
    for (std::size_t y = 0; y < n; ++y) {
      std::reverse(out.data().begin() + static_cast<std::ptrdiff_t>(y * n),
                   out.data().begin() + static_cast<std::ptrdiff_t>((y + 1) * n));
    }
  }
  for (std::size_t turn = 0; turn < index % 4; ++turn) {
    Tensor<T> rotated({n, n});
    // counter-clockwise: R(i, j) = A(j, n-1-i)
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        rotated.data()[i * n + j] = out.data()[j * n + (n - 1 - i)];
      }
    }
    out = rotated;
  }
  return out;
}

// ---------------------------------------------------------------- Samplers

template <typename T>
BlockSampler<T>::BlockSampler(GaussianOperator<T> op, std::size_t height, std::size_t width, std::size_t stride)
  : op_{std::move(op)}
  , height_{height}
  , width_{width}
{
  if (height * width == op_.n()) {
    whole_ = true;
    return;
  }
  auto const b = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(op_.n()))));
  if (b * b != op_.n()) {
    throw ShapeError(fmt::format("operator with n = {} is neither a square block nor a {}x{} image", op_.n(), height,
                                 width));
  }
  if (height < b || width < b) {
    throw DataError(fmt::format("image {}x{} is smaller than the {}x{} sampling block", height, width, b, b));
  }
  grid_ = make_block_grid(height, width, b, stride);
}

template <typename T> Tensor<T> BlockSampler<T>::measure(Tape<T> &tape, Tensor<T> const &images) const
{
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != height_ || images.dim(3) != width_) {
    throw ShapeError(fmt::format("measure: images {} for a {}x{} sampler", to_string(images.shape()), height_, width_));
  }
  if (whole_) { return op_.sample(tape, images); }
  return op_.sample(tape, unfold(tape, images, grid_));
}

template <typename T> Tensor<T> BlockSampler<T>::adjoint(Tape<T> &tape, Tensor<T> const &measurements) const
{
  if (measurements.rank() != 2 || measurements.dim(1) != op_.m()) {
    throw ShapeError(fmt::format("adjoint: measurements {} for {} rows", to_string(measurements.shape()), op_.m()));
  }
  auto const back = op_.adjoint(tape, measurements);
  if (whole_) { return reshape(tape, back, {measurements.dim(0), 1, height_, width_}); }
  if (measurements.dim(0) % grid_.count() != 0) {
    throw ShapeError(fmt::format("adjoint: {} measurement rows for {} blocks per image", measurements.dim(0),
                                 grid_.count()));
  }
  auto const b = grid_.block;
  return fold(tape, reshape(tape, back, {measurements.dim(0), 1, b, b}), grid_);
}

template <typename T> Tensor<T> MriSampler<T>::measure(Tape<T> &tape, Tensor<T> const &images) const
{
  return op_.forward(tape, images);
}

template <typename T> Tensor<T> MriSampler<T>::adjoint(Tape<T> &tape, Tensor<T> const &measurements) const
{
  return op_.adjoint(tape, measurements);
}

#define MADUN_INSTANTIATE_CS(T)                                                                                    \
  template class GaussianOperator<T>;                                                                              \
  template class MriOperator<T>;                                                                                   \
  template class BlockSampler<T>;                                                                                  \
  template class MriSampler<T>;                                                                                    \
  template std::vector<Tensor<T>> extract_blocks(Tensor<T> const &, std::size_t, std::size_t, BlockGrid *);        \
  template Tensor<T> fold_average(std::vector<Tensor<T>> const &, BlockGrid const &);                              \
  template Tensor<T> unfold(Tape<T> &, Tensor<T> const &, BlockGrid const &);                                      \
  template Tensor<T> fold(Tape<T> &, Tensor<T> const &, BlockGrid const &);                                        \
  template Tensor<T> augment(Tensor<T> const &, std::size_t);

MADUN_INSTANTIATE_CS(float)
MADUN_INSTANTIATE_CS(double)

} // namespace madun
