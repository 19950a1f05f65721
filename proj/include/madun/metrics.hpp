#pragma once

#include "madun/binding.hpp"
#include "madun/model.hpp"

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace madun {

// 10 log10(255^2 / MSE) on [H,W] images; +infinity when the images are identical.
template <typename T> double psnr(Tensor<T> const &ref, Tensor<T> const &test);

// Mean SSIM over all valid 11x11 windows (Gaussian sigma 1.5, K1 0.01, K2 0.03, L 255).
template <typename T> double ssim(Tensor<T> const &ref, Tensor<T> const &test);

// image [H,W] in 0..255 -> reconstruction [H,W] clipped to 0..255. Gaussian
// operators sample overlapping blocks at `stride`; MRI operators need the
// image to match the mask.
template <typename T>
Tensor<T> reconstruct_image(Tensor<T> const &image, OperatorBinding<T> const &binding, ModelParams<T> const &params,
                            std::size_t stride = 22);

struct ImageScore
{
  std::string name;
  double      psnr = 0;
  double      ssim = 0;
};

struct EvalReport
{
  std::vector<ImageScore> images;
  double                  mean_psnr = 0;
  double                  mean_ssim = 0;
  nlohmann::json          config = nlohmann::json::object(); // echo of ratio, variant, checkpoint

  nlohmann::json to_json() const;
  std::string    to_table() const;
};

// Scores every (name, image) pair; means are plain averages of the per-image values.
template <typename T>
EvalReport evaluate(std::vector<std::pair<std::string, Tensor<T>>> const &images, OperatorBinding<T> const &binding,
                    ModelParams<T> const &params, std::size_t stride = 22, std::vector<Tensor<T>> *outputs = nullptr);

} // namespace madun
