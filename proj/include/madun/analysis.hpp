#pragma once

#include "madun/model.hpp"

#include <string>
#include <vector>

namespace madun {

struct GateNorms
{
  std::size_t stage = 0; // 1-based
  double      input = 0, forget = 0, output = 0;
};

// Per stage and gate: mean Frobenius norm of the input-path and hidden-path
// kernels. ContractError unless the model carries ConvLSTM memory.
template <typename T> std::vector<GateNorms> gate_weight_norms(ModelParams<T> const &params);

struct SpectralBin
{
  double      frequency = 0; // bin centre in [0, 1]
  double      power = 0;     // mean squared DCT coefficient in the bin
  std::size_t count = 0;     // coefficients that fell in the bin
};

struct SpectralCurve
{
  std::vector<SpectralBin> bins;

  // sum(power * count), equal to the feature energy.
  double energy() const;
};

// Orthonormal 2-D DCT-II per channel of a square [1,C,H,H] feature, binned by
// radial frequency sqrt(u^2 + v^2) / sqrt(2 (H-1)^2). Lower bin edges are
// inclusive; frequency 1 lands in the last bin.
template <typename T> SpectralCurve spectral_density(Tensor<T> const &feature, std::size_t bins = 32);

// Count-weighted average of curves with identical binning.
SpectralCurve average_curves(std::vector<SpectralCurve> const &curves);

// Orthonormal DCT-II of one square plane, row-major.
std::vector<double> dct2(std::vector<double> const &plane, std::size_t n);

} // namespace madun
