#pragma once

#include "madun/tensor.hpp"

#include <filesystem>
#include <vector>

namespace madun {

// 8-bit binary PGM (P5). Pixels are returned as [H,W] values in 0..255.
template <typename T> Tensor<T> read_pgm(std::filesystem::path const &path);

// Values are rounded and clipped to 0..255.
template <typename T> void write_pgm(std::filesystem::path const &path, Tensor<T> const &image);

// Sorted list of *.pgm files in a directory.
std::vector<std::filesystem::path> list_images(std::filesystem::path const &dir);

} // namespace madun
