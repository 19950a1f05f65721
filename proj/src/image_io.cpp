#include "madun/image_io.hpp"

#include "madun/error.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>

namespace madun {

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string token(std::istream &in)
{
  std::string out;
  while (in) {
    int const c = in.get();
    if (c == EOF) { break; }
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
      if (!out.empty()) { break; }
      continue;
    }
    if (std::isspace(c)) {
      if (!out.empty()) { break; }
      continue;
    }
    out.push_back(static_cast<char>(c));
  }
  return out;
}

std::size_t number(std::istream &in, std::filesystem::path const &path, char const *what)
{
  auto const t = token(in);
  try {
    std::size_t used = 0;
    auto const  v = std::stoul(t, &used);
    if (used != t.size()) { throw std::invalid_argument(t); }
    return v;
  } catch (std::exception const &) {
    throw DataError(fmt::format("{}: bad PGM {} '{}'", path.string(), what, t));
  }
}

} // namespace

template <typename T> Tensor<T> read_pgm(std::filesystem::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw DataError(fmt::format("{}: cannot open", path.string())); }
  if (token(in) != "P5") { throw DataError(fmt::format("{}: not a binary PGM (P5)", path.string())); }
  auto const width = number(in, path, "width");
  auto const height = number(in, path, "height");
  auto const maxval = number(in, path, "maxval");
  if (width == 0 || height == 0) { throw DataError(fmt::format("{}: empty image", path.string())); }
  if (maxval == 0 || maxval > 255) {
    throw DataError(fmt::format("{}: only 8-bit PGM is supported (maxval {})", path.string(), maxval));
  }
  std::vector<unsigned char> raw(width * height);
  in.read(reinterpret_cast<char *>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw DataError(fmt::format("{}: truncated pixel data", path.string()));
  }
  Tensor<T> image({height, width});
  std::transform(raw.begin(), raw.end(), image.data().begin(), [](unsigned char v) { return static_cast<T>(v); });
  return image;
}

template <typename T> void write_pgm(std::filesystem::path const &path, Tensor<T> const &image)
{
  if (image.rank() != 2) { throw ShapeError(fmt::format("write_pgm: image must be [H,W], got {}", to_string(image.shape()))); }
  std::ofstream out(path, std::ios::binary);
  if (!out) { throw DataError(fmt::format("{}: cannot write", path.string())); }
  out << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::vector<unsigned char> raw(image.numel());
  std::transform(image.data().begin(), image.data().end(), raw.begin(), [](T v) {
    return static_cast<unsigned char>(std::clamp(std::lround(static_cast<double>(v)), 0L, 255L));
  });
  out.write(reinterpret_cast<char const *>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

std::vector<std::filesystem::path> list_images(std::filesystem::path const &dir)
{
  if (!std::filesystem::is_directory(dir)) { throw DataError(fmt::format("{}: not a directory", dir.string())); }
  std::vector<std::filesystem::path> files;
  for (auto const &entry : std::filesystem::directory_iterator(dir)) {
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (entry.is_regular_file() && ext == ".pgm") { files.push_back(entry.path()); }
  }
  std::sort(files.begin(), files.end());
  return files;
}

template Tensor<float>  read_pgm<float>(std::filesystem::path const &);
template Tensor<double> read_pgm<double>(std::filesystem::path const &);
template void           write_pgm<float>(std::filesystem::path const &, Tensor<float> const &);
template void           write_pgm<double>(std::filesystem::path const &, Tensor<double> const &);

} // namespace madun
