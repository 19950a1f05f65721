#pragma once

#include "madun/tensor.hpp"

#include <complex>
#include <cstdint>
#include <memory>
#include <vector>

namespace madun {

// Row-orthonormalized Gaussian sampling matrix phi [M,N].
template <typename T> class GaussianOperator
{
public:
  // m = round(ratio * n), at least 1. Entries are i.i.d. N(0,1) from the seed,
  // then the rows are orthonormalized.
  static GaussianOperator build(double ratio, std::size_t n, std::uint64_t seed);
  // ratio 0 means m / n.
  static GaussianOperator from_matrix(Tensor<T> phi, double ratio = 0.0, std::uint64_t seed = 0);

  Tensor<T> const &phi() const { return phi_; }
  Tensor<T>       &phi() { return phi_; }
  double           ratio() const { return ratio_; }
  std::size_t      m() const { return phi_.dim(0); }
  std::size_t      n() const { return phi_.dim(1); }
  std::uint64_t    seed() const { return seed_; }
  bool             learnable() const { return phi_.requires_grad(); }
  void             set_learnable(bool flag) { phi_.set_requires_grad(flag); }

  // x [N] -> [M], or rows of x [B,...] (N values per row) -> [B,M].
  Tensor<T> sample(Tape<T> &tape, Tensor<T> const &x) const;
  // y [M] -> [N], or [B,M] -> [B,N].
  Tensor<T> adjoint(Tape<T> &tape, Tensor<T> const &y) const;

  // max |phi phi^T - I|.
  double orthonormality_error() const;

private:
  Tensor<T>     phi_;
  double        ratio_ = 1.0;
  std::uint64_t seed_ = 0;
};

// Separable unitary DFT over the last two axes (H, W) of a complex buffer.
// Power-of-two lengths use a radix-2 FFT, others a direct O(n^2) sum.
class Dft2d
{
public:
  Dft2d(std::size_t height, std::size_t width);
  void forward(std::span<std::complex<double>> plane) const;
  void inverse(std::span<std::complex<double>> plane) const;

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }

private:
  void transform(std::span<std::complex<double>> plane, bool inverse) const;

  std::size_t height_, width_;
};

// CS-MRI sampling B F: binary k-space mask times the unitary 2-D DFT.
// Complex values are stored with a trailing axis of 2 (real, imaginary).
template <typename T> class MriOperator
{
public:
  explicit MriOperator(Tensor<T> mask);

  Tensor<T> const &mask() const { return mask_; }
  std::size_t      height() const { return mask_.dim(0); }
  std::size_t      width() const { return mask_.dim(1); }
  double           sampling_ratio() const;

  // x [..., H, W] -> k [..., H, W, 2]; k = mask o F x.
  Tensor<T> forward(Tape<T> &tape, Tensor<T> const &x) const;
  // k [..., H, W, 2] -> x [..., H, W]; x = Re(F^H (mask o k)).
  Tensor<T> adjoint(Tape<T> &tape, Tensor<T> const &k) const;

private:
  Tensor<T>              mask_;
  std::shared_ptr<Dft2d> dft_;
};

// Anchors of (possibly overlapping) square blocks covering an image. The
// last row/column of blocks is anchored to the image edge when the stride
// does not divide the extent.
struct BlockGrid
{
  std::size_t              block = 33;
  std::size_t              stride = 33;
  std::size_t              height = 0;
  std::size_t              width = 0;
  std::vector<std::size_t> row_anchors;
  std::vector<std::size_t> col_anchors;
  std::vector<std::uint32_t> overlap; // per-pixel cover count, [H*W]

  std::size_t count() const { return row_anchors.size() * col_anchors.size(); }
  bool        trivial() const { return count() == 1 && height == block && width == block; }
};

BlockGrid make_block_grid(std::size_t height, std::size_t width, std::size_t block, std::size_t stride);

// image [H,W] -> raster-ordered blocks [b,b].
template <typename T>
std::vector<Tensor<T>> extract_blocks(Tensor<T> const &image, std::size_t block, std::size_t stride,
                                      BlockGrid *grid = nullptr);
template <typename T> Tensor<T> fold_average(std::vector<Tensor<T>> const &blocks, BlockGrid const &grid);

// Batched, differentiable versions used inside the model.
// images [N,1,H,W] -> blocks [N*count,1,b,b] (image-major, then raster order).
template <typename T> Tensor<T> unfold(Tape<T> &tape, Tensor<T> const &images, BlockGrid const &grid);
// blocks [N*count,1,b,b] -> images [N,1,H,W], averaged over overlaps.
template <typename T> Tensor<T> fold(Tape<T> &tape, Tensor<T> const &blocks, BlockGrid const &grid);

// Dihedral transform of a square block: index = rotations + 4 * flip, where the
// horizontal flip is applied before index % 4 counter-clockwise quarter turns.
template <typename T> Tensor<T> augment(Tensor<T> const &block, std::size_t index);

// Measurement model used by the network: measure() maps images [N,1,H,W] to
// measurements, adjoint() maps them back to image space.
template <typename T> class MeasurementOperator
{
public:
  virtual ~MeasurementOperator() = default;
  virtual Tensor<T>   measure(Tape<T> &tape, Tensor<T> const &images) const = 0;
  virtual Tensor<T>   adjoint(Tape<T> &tape, Tensor<T> const &measurements) const = 0;
  virtual std::size_t height() const = 0;
  virtual std::size_t width() const = 0;
};

// Gaussian sampling of each block of the image grid. Back-projection folds
// phi^T y per block by overlap averaging. A trivial grid (one block equal to
// the image) skips the fold entirely; a non-square image equal in size to n
// is sampled as a single vector.
template <typename T> class BlockSampler final : public MeasurementOperator<T>
{
public:
  BlockSampler(GaussianOperator<T> op, std::size_t height, std::size_t width, std::size_t stride);

  Tensor<T>   measure(Tape<T> &tape, Tensor<T> const &images) const override;
  Tensor<T>   adjoint(Tape<T> &tape, Tensor<T> const &measurements) const override;
  std::size_t height() const override { return height_; }
  std::size_t width() const override { return width_; }

  GaussianOperator<T> const &op() const { return op_; }
  BlockGrid const           &grid() const { return grid_; }

private:
  GaussianOperator<T> op_;
  std::size_t         height_, width_;
  bool                whole_ = false;
  BlockGrid           grid_;
};

template <typename T> class MriSampler final : public MeasurementOperator<T>
{
public:
  explicit MriSampler(MriOperator<T> op)
    : op_{std::move(op)}
  {
  }

  Tensor<T>   measure(Tape<T> &tape, Tensor<T> const &images) const override;
  Tensor<T>   adjoint(Tape<T> &tape, Tensor<T> const &measurements) const override;
  std::size_t height() const override { return op_.height(); }
  std::size_t width() const override { return op_.width(); }

private:
  MriOperator<T> op_;
};

} // namespace madun
