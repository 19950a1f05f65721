#include "madun/binding.hpp"

#include "madun/error.hpp"

#include <cmath>
#include <fmt/format.h>

namespace madun {

template <typename T> OperatorBinding<T> OperatorBinding<T>::from(GaussianOperator<T> op)
{
  OperatorBinding b;
  b.kind = OperatorKind::gaussian;
  b.gaussian = std::move(op);
  return b;
}

template <typename T> OperatorBinding<T> OperatorBinding<T>::from(MriOperator<T> op)
{
  OperatorBinding b;
  b.kind = OperatorKind::mri;
  b.mri = std::move(op);
  return b;
}

template <typename T> std::size_t OperatorBinding<T>::block() const
{
  if (kind == OperatorKind::mri) {
    if (!mri) { throw ContractError("MRI binding without a mask"); }
    if (mri->height() != mri->width()) {
      throw ConfigError(fmt::format("MRI mask must be square, got {}x{}", mri->height(), mri->width()));
    }
    return mri->height();
  }
  if (!gaussian) { throw ContractError("Gaussian binding without a matrix"); }
  auto const b = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(gaussian->n()))));
  if (b * b != gaussian->n()) {
    throw ConfigError(fmt::format("sampling matrix width {} is not a square block", gaussian->n()));
  }
  return b;
}

template <typename T> double OperatorBinding<T>::ratio() const
{
  if (kind == OperatorKind::mri) { return mri ? mri->sampling_ratio() : 0.0; }
  return gaussian ? gaussian->ratio() : 0.0;
}

template <typename T>
std::unique_ptr<MeasurementOperator<T>> OperatorBinding<T>::sampler(std::size_t height, std::size_t width,
                                                                    std::size_t stride) const
{
  if (kind == OperatorKind::mri) {
    if (!mri) { throw ContractError("MRI binding without a mask"); }
    if (height != mri->height() || width != mri->width()) {
      throw DataError(
        fmt::format("image {}x{} does not match the {}x{} MRI mask", height, width, mri->height(), mri->width()));
    }
    return std::make_unique<MriSampler<T>>(*mri);
  }
  if (!gaussian) { throw ContractError("Gaussian binding without a matrix"); }
  return std::make_unique<BlockSampler<T>>(*gaussian, height, width, stride);
}

template struct OperatorBinding<float>;
template struct OperatorBinding<double>;

} // namespace madun
