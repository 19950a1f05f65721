#pragma once

#include "madun/tensor.hpp"

#include <functional>
#include <vector>

namespace madun {

struct GradCheckOptions
{
  double epsilon = 1e-6;
  double tolerance = 1e-4;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-5;
};

struct GradCheckReport
{
  std::vector<double> errors; // one per checked coordinate, in point order
  double              max_error = 0.0;
  std::size_t         worst_point = 0;
  std::size_t         worst_index = 0;
  double              worst_analytic = 0.0;
  double              worst_numeric = 0.0;
  bool                passed = false;
};

// f builds a scalar loss on the given tape from the current values of the
// points. The tape gradient of every point is compared to central differences.
template <typename T>
using ScalarFunction = std::function<Tensor<T>(Tape<T> &)>;

template <typename T>
GradCheckReport grad_check(ScalarFunction<T> const &f, std::vector<Tensor<T>> points, GradCheckOptions const &opts = {});

template <typename T>
GradCheckReport grad_check(ScalarFunction<T> const &f, Tensor<T> point, GradCheckOptions const &opts = {})
{
  return grad_check<T>(f, std::vector<Tensor<T>>{std::move(point)}, opts);
}

} // namespace madun
