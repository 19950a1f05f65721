#include "madun/metrics.hpp"

#include "madun/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fmt/format.h>
#include <limits>

namespace madun {

namespace {

template <typename T> void check_pair(Tensor<T> const &ref, Tensor<T> const &test, char const *what)
{
  if (ref.rank() != 2) { throw ShapeError(fmt::format("{}: expected [H,W], got {}", what, to_string(ref.shape()))); }
  if (ref.shape() != test.shape()) {
    throw ShapeError(fmt::format("{}: {} vs {}", what, to_string(ref.shape()), to_string(test.shape())));
  }
}

constexpr int    window_radius = 5;
constexpr double window_sigma = 1.5;

// Normalized 1-D Gaussian; the 2-D window is its outer product.
std::array<double, 2 * window_radius + 1> gaussian_taps()
{
  std::array<double, 2 * window_radius + 1> taps{};
  double                                    total = 0;
  for (int i = -window_radius; i <= window_radius; ++i) {
    taps[i + window_radius] = std::exp(-(i * i) / (2 * window_sigma * window_sigma));
    total += taps[i + window_radius];
  }
  for (double &t : taps) {
    t /= total;
  }
  return taps;
}

// Valid-mode separable filtering: [H,W] -> [H-10, W-10].
std::vector<double> filter_valid(std::vector<double> const &img, std::size_t H, std::size_t W)
{
  auto const        taps = gaussian_taps();
  std::size_t const k = taps.size();
  std::size_t const oh = H - k + 1, ow = W - k + 1;
  std::vector<double> rows(H * ow, 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (std::size_t t = 0; t < k; ++t) {
        acc += taps[t] * img[y * W + x + t];
      }
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0;
      for (std::size_t t = 0; t < k; ++t) {
        acc += taps[t] * rows[(y + t) * ow + x];
      }
      out[y * ow + x] = acc;
    }
  }
  return out;
}

} // namespace

template <typename T> double psnr(Tensor<T> const &ref, Tensor<T> const &test)
{
  check_pair(ref, test, "psnr");
  double sq = 0;
  for (std::size_t i = 0; i < ref.numel(); ++i) {
    double const d = static_cast<double>(ref.data()[i]) - static_cast<double>(test.data()[i]);
    sq += d * d;
  }
  if (sq == 0.0) { return std::numeric_limits<double>::infinity(); }
  double const mse = sq / static_cast<double>(ref.numel());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

template <typename T> double ssim(Tensor<T> const &ref, Tensor<T> const &test)
{
  check_pair(ref, test, "ssim");
  std::size_t const H = ref.dim(0), W = ref.dim(1);
  std::size_t const win = 2 * window_radius + 1;
  if (H < win || W < win) {
    throw DataError(fmt::format("ssim needs images of at least {}x{}, got {}x{}", win, win, H, W));
  }
  std::vector<double> a(ref.data().begin(), ref.data().end()), b(test.data().begin(), test.data().end());
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  auto const   ma = filter_valid(a, H, W), mb = filter_valid(b, H, W);
  auto const   saa = filter_valid(aa, H, W), sbb = filter_valid(bb, H, W), sab = filter_valid(ab, H, W);
  double const c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  double       acc = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    double const va = saa[i] - ma[i] * ma[i];
    double const vb = sbb[i] - mb[i] * mb[i];
    double const cov = sab[i] - ma[i] * mb[i];
    acc += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
  }
  return acc / static_cast<double>(ma.size());
}

template <typename T>
Tensor<T> reconstruct_image(Tensor<T> const &image, OperatorBinding<T> const &binding, ModelParams<T> const &params,
                            std::size_t stride)
{
  if (image.rank() != 2) { throw ShapeError(fmt::format("reconstruct: expected [H,W], got {}", to_string(image.shape()))); }
  std::size_t const H = image.dim(0), W = image.dim(1);
  if (binding.kind == OperatorKind::gaussian) {
    auto const b = binding.block();
    if (H < b || W < b) { throw DataError(fmt::format("image {}x{} is smaller than the {}x{} block", H, W, b, b)); }
  }
  auto const sampler = binding.sampler(H, W, stride);
  Tensor<T>  x({1, 1, H, W});
  for (std::size_t i = 0; i < image.numel(); ++i) {
    x.data()[i] = image.data()[i] / T(255);
  }
  auto       tape = Tape<T>::inference();
  auto const out = model_forward(tape, sampler->measure(tape, x), *sampler, params).output;
  Tensor<T>  result({H, W});
  for (std::size_t i = 0; i < result.numel(); ++i) {
    result.data()[i] = std::clamp(out.data()[i] * T(255), T(0), T(255));
  }
  return result;
}

template <typename T>
EvalReport evaluate(std::vector<std::pair<std::string, Tensor<T>>> const &images, OperatorBinding<T> const &binding,
                    ModelParams<T> const &params, std::size_t stride, std::vector<Tensor<T>> *outputs)
{
  if (images.empty()) { throw DataError("no images to evaluate"); }
  EvalReport report;
  for (auto const &[name, img] : images) {
    auto const rec = reconstruct_image(img, binding, params, stride);
    report.images.push_back({name, psnr(img, rec), ssim(img, rec)});
    if (outputs) { outputs->push_back(rec); }
  }
  for (auto const &s : report.images) {
    report.mean_psnr += s.psnr;
    report.mean_ssim += s.ssim;
  }
  report.mean_psnr /= static_cast<double>(report.images.size());
  report.mean_ssim /= static_cast<double>(report.images.size());
  report.config = {{"ratio", binding.ratio()},
                   {"operator", to_string(binding.kind)},
                   {"stages", params.config.stages},
                   {"channels", params.config.channels},
                   {"hsm", to_string(params.config.hsm)},
                   {"clm", to_string(params.config.clm)},
                   {"stride", stride}};
  return report;
}

namespace {

// JSON has no infinity; identical images are reported as the string "inf".
nlohmann::json number(double v)
{
  if (std::isinf(v)) { return v > 0 ? "inf" : "-inf"; }
  return v;
}

} // namespace

nlohmann::json EvalReport::to_json() const
{
  nlohmann::json rows = nlohmann::json::array();
  for (auto const &s : images) {
    rows.push_back({{"name", s.name}, {"psnr", number(s.psnr)}, {"ssim", s.ssim}});
  }
  return {{"images", rows}, {"mean_psnr", number(mean_psnr)}, {"mean_ssim", mean_ssim}, {"config", config}};
}

std::string EvalReport::to_table() const
{
  std::size_t width = 5;
  for (auto const &s : images) {
    width = std::max(width, s.name.size());
  }
  std::string out = fmt::format("{:<{}}  {:>9}  {:>7}\n", "image", width, "PSNR(dB)", "SSIM");
  for (auto const &s : images) {
    out += fmt::format("{:<{}}  {:>9.4f}  {:>7.4f}\n", s.name, width, s.psnr, s.ssim);
  }
  out += fmt::format("{:<{}}  {:>9.4f}  {:>7.4f}\n", "mean", width, mean_psnr, mean_ssim);
  return out;
}

#define MADUN_INSTANTIATE_METRICS(T)                                                                               \
  template double    psnr(Tensor<T> const &, Tensor<T> const &);                                                   \
  template double    ssim(Tensor<T> const &, Tensor<T> const &);                                                   \
  template Tensor<T> reconstruct_image(Tensor<T> const &, OperatorBinding<T> const &, ModelParams<T> const &,      \
                                       std::size_t);                                                               \
  template EvalReport evaluate(std::vector<std::pair<std::string, Tensor<T>>> const &, OperatorBinding<T> const &, \
                               ModelParams<T> const &, std::size_t, std::vector<Tensor<T>> *);

MADUN_INSTANTIATE_METRICS(float)
MADUN_INSTANTIATE_METRICS(double)

} // namespace madun
