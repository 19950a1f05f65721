#include "madun/grad_check.hpp"

#include "madun/error.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace madun {

template <typename T>
GradCheckReport grad_check(ScalarFunction<T> const &f, std::vector<Tensor<T>> points, GradCheckOptions const &opts)
{
  auto evaluate = [&f]() {
    auto       tape = Tape<T>::inference();
    auto const loss = f(tape);
    if (loss.numel() != 1) { throw ContractError("grad_check: function is not scalar-valued"); }
    return static_cast<double>(loss.item());
  };

  double const base = evaluate();
  if (double const again = evaluate(); again != base) {
    throw ContractError(fmt::format("grad_check: function is not deterministic ({} vs {})", base, again));
  }

  std::vector<bool> previous_flags;
  for (auto &p : points) {
    previous_flags.push_back(p.requires_grad());
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape<T> tape;
    auto    loss = f(tape);
    tape.backward(loss);
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    auto              &p = points[pi];
    std::vector<T> const analytic(p.grad().begin(), p.grad().end());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      T const saved = p.data()[i];
      p.data()[i] = saved + static_cast<T>(opts.epsilon);
      double const up = evaluate();
      p.data()[i] = saved - static_cast<T>(opts.epsilon);
      double const down = evaluate();
      p.data()[i] = saved;

      double const numeric = (up - down) / (2.0 * opts.epsilon);
      double const a = static_cast<double>(analytic[i]);
      double const denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      double const err = std::abs(a - numeric) / denom;
      report.errors.push_back(err);
      if (err > report.max_error || !std::isfinite(err)) {
        report.max_error = err;
        report.worst_point = pi;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
    p.zero_grad();
    p.set_requires_grad(previous_flags[pi]);
  }
  report.passed = std::isfinite(report.max_error) && report.max_error < opts.tolerance;
  return report;
}

template GradCheckReport grad_check<float>(ScalarFunction<float> const &, std::vector<Tensor<float>>,
                                           GradCheckOptions const &);
template GradCheckReport grad_check<double>(ScalarFunction<double> const &, std::vector<Tensor<double>>,
                                            GradCheckOptions const &);

} // namespace madun
