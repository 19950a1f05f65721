#pragma once

#include "madun/cs_ops.hpp"
#include "madun/model.hpp"

#include <memory>
#include <optional>

namespace madun {

// The sampling operator a model is trained and evaluated with: a Gaussian
// block matrix or an MRI k-space mask. Copies share the underlying tensors.
template <typename T> struct OperatorBinding
{
  OperatorKind                       kind = OperatorKind::gaussian;
  std::optional<GaussianOperator<T>> gaussian;
  std::optional<MriOperator<T>>      mri;

  static OperatorBinding from(GaussianOperator<T> op);
  static OperatorBinding from(MriOperator<T> op);

  // Side of the square training block: sqrt(n) for Gaussian, the mask side for MRI.
  std::size_t block() const;
  double      ratio() const;

  // Measurement model for whole images of the given size. Gaussian images are
  // covered by blocks at `stride`; MRI images must match the mask.
  std::unique_ptr<MeasurementOperator<T>> sampler(std::size_t height, std::size_t width, std::size_t stride) const;
};

} // namespace madun
