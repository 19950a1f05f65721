#include "madun/analysis.hpp"

#include "madun/error.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fmt/format.h>
#include <numbers>

namespace madun {

namespace {

template <typename T> double frobenius(Tensor<T> const &t)
{
  double acc = 0;
  for (T v : t.data()) {
    acc += static_cast<double>(v) * static_cast<double>(v);
  }
  return std::sqrt(acc);
}

Eigen::MatrixXd dct_matrix(std::size_t n)
{
  Eigen::MatrixXd d(n, n);
  double const    nn = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    double const scale = k == 0 ? std::sqrt(1.0 / nn) : std::sqrt(2.0 / nn);
    for (std::size_t i = 0; i < n; ++i) {
      d(k, i) = scale * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * nn));
    }
  }
  return d;
}

} // namespace

template <typename T> std::vector<GateNorms> gate_weight_norms(ModelParams<T> const &params)
{
  if (params.config.clm != ClmVariant::lstm) {
    throw ContractError(fmt::format("gate norms need ConvLSTM memory, model uses clm={}", to_string(params.config.clm)));
  }
  std::vector<GateNorms> out;
  for (std::size_t k = 0; k < params.stages.size(); ++k) {
    auto const &l = params.stages[k].lstm;
    if (!l) { throw ContractError(fmt::format("stage {} has no ConvLSTM parameters", k + 1)); }
    out.push_back({k + 1, 0.5 * (frobenius(l->w_si) + frobenius(l->w_hi)), 0.5 * (frobenius(l->w_sf) + frobenius(l->w_hf)),
                   0.5 * (frobenius(l->w_so) + frobenius(l->w_ho))});
  }
  return out;
}

std::vector<double> dct2(std::vector<double> const &plane, std::size_t n)
{
  auto const                                                             d = dct_matrix(n);
  Eigen::Map<Eigen::Matrix<double, -1, -1, Eigen::RowMajor> const> const x(plane.data(), n, n);
  Eigen::Matrix<double, -1, -1, Eigen::RowMajor> const                   c = d * x * d.transpose();
  return std::vector<double>(c.data(), c.data() + c.size());
}

double SpectralCurve::energy() const
{
  double e = 0;
  for (auto const &b : bins) {
    e += b.power * static_cast<double>(b.count);
  }
  return e;
}

template <typename T> SpectralCurve spectral_density(Tensor<T> const &feature, std::size_t bins)
{
  if (feature.rank() != 4 || feature.dim(0) != 1) {
    throw ContractError(fmt::format("spectral density expects [1,C,H,W], got {}", to_string(feature.shape())));
  }
  std::size_t const C = feature.dim(1), H = feature.dim(2), W = feature.dim(3);
  if (H != W) { throw ContractError(fmt::format("spectral density needs a square feature, got {}x{}", H, W)); }
  if (H < 2) { throw ContractError("spectral density needs H >= 2"); }
  if (bins == 0) { throw ConfigError("spectral density needs at least one bin"); }

  SpectralCurve curve;
  curve.bins.resize(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    curve.bins[i].frequency = (static_cast<double>(i) + 0.5) / static_cast<double>(bins);
  }
  std::vector<double> sums(bins, 0.0);
  double const        rmax = std::sqrt(2.0) * static_cast<double>(H - 1);
  std::size_t const   plane = H * W;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> x(feature.data().begin() + static_cast<std::ptrdiff_t>(c * plane),
                          feature.data().begin() + static_cast<std::ptrdiff_t>((c + 1) * plane));
    auto const          coeff = dct2(x, H);
    for (std::size_t u = 0; u < H; ++u) {
      for (std::size_t v = 0; v < W; ++v) {
        double const r = std::sqrt(static_cast<double>(u * u + v * v)) / rmax;
        auto const   bin = std::min(bins - 1, static_cast<std::size_t>(std::floor(r * static_cast<double>(bins))));
        sums[bin] += coeff[u * W + v] * coeff[u * W + v];
        ++curve.bins[bin].count;
      }
    }
  }
  for (std::size_t i = 0; i < bins; ++i) {
    if (curve.bins[i].count > 0) { curve.bins[i].power = sums[i] / static_cast<double>(curve.bins[i].count); }
  }
  return curve;
}

SpectralCurve average_curves(std::vector<SpectralCurve> const &curves)
{
  if (curves.empty()) { throw ContractError("no spectral curves to average"); }
  SpectralCurve out;
  out.bins = curves[0].bins;
  for (auto &b : out.bins) {
    b.power *= static_cast<double>(b.count);
  }
  for (std::size_t k = 1; k < curves.size(); ++k) {
    if (curves[k].bins.size() != out.bins.size()) { throw ContractError("spectral curves differ in bin count"); }
    for (std::size_t i = 0; i < out.bins.size(); ++i) {
      out.bins[i].power += curves[k].bins[i].power * static_cast<double>(curves[k].bins[i].count);
      out.bins[i].count += curves[k].bins[i].count;
    }
  }
  for (auto &b : out.bins) {
    if (b.count > 0) { b.power /= static_cast<double>(b.count); }
  }
  return out;
}

template std::vector<GateNorms> gate_weight_norms(ModelParams<float> const &);
template std::vector<GateNorms> gate_weight_norms(ModelParams<double> const &);
template SpectralCurve          spectral_density(Tensor<float> const &, std::size_t);
template SpectralCurve          spectral_density(Tensor<double> const &, std::size_t);

} // namespace madun
