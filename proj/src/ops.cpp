#include "madun/ops.hpp"

#include "madun/error.hpp"

#include <Eigen/Core>
#include <cmath>
#include <fmt/format.h>

namespace madun {

namespace {

template <typename T> using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T> using MatrixMap = Eigen::Map<Matrix<T>>;
template <typename T> using ConstMatrixMap = Eigen::Map<Matrix<T> const>;

struct ConvGeometry
{
  std::size_t batch, cin, cout, height, width, kh, kw;
  std::size_t plane() const { return height * width; }
  std::size_t patch() const { return cin * kh * kw; }
};

// cols [Cin*kh*kw, H*W]; row (c,ky,kx) holds input shifted by (ky-ph, kx-pw).
template <typename T> void im2col(T const *in, ConvGeometry const &g, T *cols)
{
  auto const ph = static_cast<std::ptrdiff_t>(g.kh / 2);
  auto const pw = static_cast<std::ptrdiff_t>(g.kw / 2);
  auto const H = static_cast<std::ptrdiff_t>(g.height);
  auto const W = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t c = 0; c < g.cin; ++c) {
    T const *plane = in + c * g.plane();
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T *row = cols + ((c * g.kh + ky) * g.kw + kx) * g.plane();
        auto const dy = static_cast<std::ptrdiff_t>(ky) - ph;
        auto const dx = static_cast<std::ptrdiff_t>(kx) - pw;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          auto const sy = y + dy;
          T         *dst = row + y * W;
          if (sy < 0 || sy >= H) {
            std::fill(dst, dst + W, T(0));
            continue;
          }
          T const *src = plane + sy * W;
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            auto const sx = x + dx;
            dst[x] = (sx >= 0 && sx < W) ? src[sx] : T(0);
          }
        }
      }
    }
  }
}

template <typename T> void col2im_add(T const *cols, ConvGeometry const &g, T *out)
{
  auto const ph = static_cast<std::ptrdiff_t>(g.kh / 2);
  auto const pw = static_cast<std::ptrdiff_t>(g.kw / 2);
  auto const H = static_cast<std::ptrdiff_t>(g.height);
  auto const W = static_cast<std::ptrdiff_t>(g.width);
  for (std::size_t c = 0; c < g.cin; ++c) {
    T *plane = out + c * g.plane();
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T const   *row = cols + ((c * g.kh + ky) * g.kw + kx) * g.plane();
        auto const dy = static_cast<std::ptrdiff_t>(ky) - ph;
        auto const dx = static_cast<std::ptrdiff_t>(kx) - pw;
        for (std::ptrdiff_t y = 0; y < H; ++y) {
          auto const sy = y + dy;
          if (sy < 0 || sy >= H) { continue; }
          T const *src = row + y * W;
          T       *dst = plane + sy * W;
          for (std::ptrdiff_t x = 0; x < W; ++x) {
            auto const sx = x + dx;
            if (sx >= 0 && sx < W) { dst[sx] += src[x]; }
          }
        }
      }
    }
  }
}

template <typename T> void accumulate(std::span<T> dst, std::span<T const> src)
{
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] += src[i];
  }
}

// Shared shape of a unary elementwise op: out = f(x), gx += g * d(x, out).
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(Tape<T> &tape, Tensor<T> const &x, Fwd fwd, Deriv deriv)
{
  Tensor<T> out(x.shape());
  auto      xd = x.data();
  auto      od = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) {
    od[i] = fwd(xd[i]);
  }
  if (tape.wants({&x})) {
    tape.record(out, [x = x, out, deriv]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      auto xv = x.data();
      auto ov = out.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += g[i] * deriv(xv[i], ov[i]);
      }
    });
  }
  return out;
}

// Rows of a [.., N] tensor: (row count, row length) for a vector or batch.
std::pair<std::size_t, std::size_t> rows_of(Shape const &s, char const *op)
{
  if (s.size() == 1) { return {1, s[0]}; }
  if (s.size() == 2) { return {s[0], s[1]}; }
  throw ShapeError(fmt::format("{}: expected a vector or [B,N] batch, got {}", op, to_string(s)));
}

} // namespace

void check_same_shape(Shape const &a, Shape const &b, char const *op)
{
  if (a != b) { throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, to_string(a), to_string(b))); }
}

template <typename T>
Tensor<T> conv2d(Tape<T> &tape, Tensor<T> const &input, Tensor<T> const &kernel, Tensor<T> const &bias)
{
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError(fmt::format("conv2d: input {} and kernel {} must be 4-D", to_string(input.shape()),
                                 to_string(kernel.shape())));
  }
  ConvGeometry const g{input.dim(0), input.dim(1), kernel.dim(0), input.dim(2),
                       input.dim(3), kernel.dim(2), kernel.dim(3)};
  if (kernel.dim(1) != g.cin) {
    throw ShapeError(fmt::format("conv2d: kernel {} expects {} input channels, input {} has {}",
                                 to_string(kernel.shape()), kernel.dim(1), to_string(input.shape()), g.cin));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) {
    throw ShapeError(fmt::format("conv2d: kernel size {}x{} must be odd", g.kh, g.kw));
  }
  if (bias.defined() && bias.shape() != Shape{g.cout}) {
    throw ShapeError(fmt::format("conv2d: bias {} for {} output channels", to_string(bias.shape()), g.cout));
  }

  Tensor<T>      out({g.batch, g.cout, g.height, g.width});
  std::vector<T> cols(g.patch() * g.plane());
  ConstMatrixMap<T> const w(kernel.ptr(), g.cout, g.patch());
  for (std::size_t n = 0; n < g.batch; ++n) {
    if (g.cin > 0) { im2col(input.ptr() + n * g.cin * g.plane(), g, cols.data()); }
    MatrixMap<T> o(out.ptr() + n * g.cout * g.plane(), g.cout, g.plane());
    if (g.cin > 0) {
      o.noalias() = w * ConstMatrixMap<T>(cols.data(), g.patch(), g.plane());
    }
    if (bias.defined()) {
      for (std::size_t c = 0; c < g.cout; ++c) {
        o.row(c).array() += bias.data()[c];
      }
    }
  }

  if (tape.wants({&input, &kernel, &bias})) {
    tape.record(out, [input = input, kernel = kernel, bias = bias, out, g]() mutable {
      std::vector<T> cols(g.patch() * g.plane());
      std::vector<T> dcols;
      auto const     go = out.grad();
      for (std::size_t n = 0; n < g.batch; ++n) {
        ConstMatrixMap<T> const gon(go.data() + n * g.cout * g.plane(), g.cout, g.plane());
        if (kernel.requires_grad() && g.cin > 0) {
          im2col(input.ptr() + n * g.cin * g.plane(), g, cols.data());
          MatrixMap<T> gw(kernel.grad().data(), g.cout, g.patch());
          gw.noalias() += gon * ConstMatrixMap<T>(cols.data(), g.patch(), g.plane()).transpose();
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad();
          for (std::size_t c = 0; c < g.cout; ++c) {
            gb[c] += gon.row(c).sum();
          }
        }
        if (input.requires_grad() && g.cin > 0) {
          dcols.resize(g.patch() * g.plane());
          MatrixMap<T>(dcols.data(), g.patch(), g.plane()).noalias() =
            ConstMatrixMap<T>(kernel.ptr(), g.cout, g.patch()).transpose() * gon;
          col2im_add(dcols.data(), g, input.grad().data() + n * g.cin * g.plane());
        }
      }
    });
  }
  return out;
}

template <typename T> Tensor<T> relu(Tape<T> &tape, Tensor<T> const &x)
{
  return unary(
    tape, x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T> Tensor<T> sigmoid(Tape<T> &tape, Tensor<T> const &x)
{
  return unary(
    tape, x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T> Tensor<T> tanh(Tape<T> &tape, Tensor<T> const &x)
{
  return unary(
    tape, x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T> Tensor<T> scale(Tape<T> &tape, Tensor<T> const &x, T factor)
{
  return unary(
    tape, x, [factor](T v) { return factor * v; }, [factor](T, T) { return factor; });
}

template <typename T> Tensor<T> add(Tape<T> &tape, Tensor<T> const &a, Tensor<T> const &b)
{
  check_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  auto      od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    od[i] = a.data()[i] + b.data()[i];
  }
  if (tape.wants({&a, &b})) {
    tape.record(out, [a = a, b = b, out]() mutable {
      std::span<T const> g = out.grad();
      if (a.requires_grad()) { accumulate(a.grad(), g); }
      if (b.requires_grad()) { accumulate(b.grad(), g); }
    });
  }
  return out;
}

template <typename T> Tensor<T> sub(Tape<T> &tape, Tensor<T> const &a, Tensor<T> const &b)
{
  check_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  auto      od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    od[i] = a.data()[i] - b.data()[i];
  }
  if (tape.wants({&a, &b})) {
    tape.record(out, [a = a, b = b, out]() mutable {
      std::span<T const> g = out.grad();
      if (a.requires_grad()) { accumulate(a.grad(), g); }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          gb[i] -= g[i];
        }
      }
    });
  }
  return out;
}

template <typename T> Tensor<T> hadamard(Tape<T> &tape, Tensor<T> const &a, Tensor<T> const &b)
{
  check_same_shape(a.shape(), b.shape(), "hadamard");
  Tensor<T> out(a.shape());
  auto      od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    od[i] = a.data()[i] * b.data()[i];
  }
  if (tape.wants({&a, &b})) {
    tape.record(out, [a = a, b = b, out]() mutable {
      std::span<T const> g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += g[i] * b.data()[i];
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          gb[i] += g[i] * a.data()[i];
        }
      }
    });
  }
  return out;
}

template <typename T> Tensor<T> scale_by(Tape<T> &tape, Tensor<T> const &x, Tensor<T> const &factor)
{
  if (factor.numel() != 1) {
    throw ShapeError(fmt::format("scale_by: factor must hold one element, got {}", to_string(factor.shape())));
  }
  T const   s = factor.item();
  Tensor<T> out(x.shape());
  auto      od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) {
    od[i] = s * x.data()[i];
  }
  if (tape.wants({&x, &factor})) {
    tape.record(out, [x = x, factor = factor, out]() mutable {
      std::span<T const> g = out.grad();
      T const            s = factor.item();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          gx[i] += s * g[i];
        }
      }
      if (factor.requires_grad()) {
        T acc = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          acc += g[i] * x.data()[i];
        }
        factor.grad()[0] += acc;
      }
    });
  }
  return out;
}

template <typename T> Tensor<T> concat_channels(Tape<T> &tape, Tensor<T> const &a, Tensor<T> const &b)
{
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError(
      fmt::format("concat_channels: incompatible {} and {}", to_string(a.shape()), to_string(b.shape())));
  }
  std::size_t const N = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor<T>         out({N, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.ptr() + n * ca * plane, ca * plane, out.ptr() + n * (ca + cb) * plane);
    std::copy_n(b.ptr() + n * cb * plane, cb * plane, out.ptr() + n * (ca + cb) * plane + ca * plane);
  }
  if (tape.wants({&a, &b})) {
    tape.record(out, [a = a, b = b, out, N, ca, cb, plane]() mutable {
      std::span<T const> g = out.grad();
      for (std::size_t n = 0; n < N; ++n) {
        T const *src = g.data() + n * (ca + cb) * plane;
        if (a.requires_grad()) {
          accumulate(a.grad().subspan(n * ca * plane, ca * plane), std::span<T const>{src, ca * plane});
        }
        if (b.requires_grad()) {
          accumulate(b.grad().subspan(n * cb * plane, cb * plane),
                     std::span<T const>{src + ca * plane, cb * plane});
        }
      }
    });
  }
  return out;
}

template <typename T> Tensor<T> matvec(Tape<T> &tape, Tensor<T> const &matrix, Tensor<T> const &v)
{
  if (matrix.rank() != 2) { throw ShapeError(fmt::format("matvec: matrix {} is not 2-D", to_string(matrix.shape()))); }
  auto const [B, N] = rows_of(v.shape(), "matvec");
  std::size_t const M = matrix.dim(0);
  if (matrix.dim(1) != N) {
    throw ShapeError(fmt::format("matvec: matrix {} vs vector {}", to_string(matrix.shape()), to_string(v.shape())));
  }
  Tensor<T> out(v.rank() == 1 ? Shape{M} : Shape{B, M});
  MatrixMap<T>(out.ptr(), B, M).noalias() =
    ConstMatrixMap<T>(v.ptr(), B, N) * ConstMatrixMap<T>(matrix.ptr(), M, N).transpose();
  if (tape.wants({&matrix, &v})) {
    tape.record(out, [matrix = matrix, v = v, out, B, M, N]() mutable {
      ConstMatrixMap<T> const g(out.grad().data(), B, M);
      if (matrix.requires_grad()) {
        MatrixMap<T>(matrix.grad().data(), M, N).noalias() += g.transpose() * ConstMatrixMap<T>(v.ptr(), B, N);
      }
      if (v.requires_grad()) {
        MatrixMap<T>(v.grad().data(), B, N).noalias() += g * ConstMatrixMap<T>(matrix.ptr(), M, N);
      }
    });
  }
  return out;
}

template <typename T> Tensor<T> matvec_transposed(Tape<T> &tape, Tensor<T> const &matrix, Tensor<T> const &u)
{
  if (matrix.rank() != 2) {
    throw ShapeError(fmt::format("matvec_transposed: matrix {} is not 2-D", to_string(matrix.shape())));
  }
  auto const [B, M] = rows_of(u.shape(), "matvec_transposed");
  std::size_t const N = matrix.dim(1);
  if (matrix.dim(0) != M) {
    throw ShapeError(
      fmt::format("matvec_transposed: matrix {} vs vector {}", to_string(matrix.shape()), to_string(u.shape())));
  }
  Tensor<T> out(u.rank() == 1 ? Shape{N} : Shape{B, N});
  MatrixMap<T>(out.ptr(), B, N).noalias() = ConstMatrixMap<T>(u.ptr(), B, M) * ConstMatrixMap<T>(matrix.ptr(), M, N);
  if (tape.wants({&matrix, &u})) {
    tape.record(out, [matrix = matrix, u = u, out, B, M, N]() mutable {
      ConstMatrixMap<T> const g(out.grad().data(), B, N);
      if (matrix.requires_grad()) {
        MatrixMap<T>(matrix.grad().data(), M, N).noalias() += ConstMatrixMap<T>(u.ptr(), B, M).transpose() * g;
      }
      if (u.requires_grad()) {
        MatrixMap<T>(u.grad().data(), B, M).noalias() += g * ConstMatrixMap<T>(matrix.ptr(), M, N).transpose();
      }
    });
  }
  return out;
}

template <typename T> Tensor<T> reshape(Tape<T> &tape, Tensor<T> const &x, Shape shape)
{
  if (numel(shape) != x.numel()) {
    throw ShapeError(fmt::format("reshape: {} to {}", to_string(x.shape()), to_string(shape)));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (tape.wants({&x})) {
    tape.record(out, [x = x, out]() mutable { accumulate(x.grad(), std::span<T const>{out.grad()}); });
  }
  return out;
}

template <typename T> Tensor<T> sum(Tape<T> &tape, Tensor<T> const &x)
{
  T acc = 0;
  for (T v : x.data()) {
    acc += v;
  }
  auto out = Tensor<T>::scalar(acc);
  if (tape.wants({&x})) {
    tape.record(out, [x = x, out]() mutable {
      T const g = out.grad()[0];
      for (T &gx : x.grad()) {
        gx += g;
      }
    });
  }
  return out;
}

template <typename T> Tensor<T> l1_mean(Tape<T> &tape, Tensor<T> const &pred, Tensor<T> const &target)
{
  check_same_shape(pred.shape(), target.shape(), "l1_mean");
  if (pred.numel() == 0) { throw ShapeError("l1_mean: empty tensors"); }
  T acc = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    acc += std::abs(pred.data()[i] - target.data()[i]);
  }
  T const count = static_cast<T>(pred.numel());
  auto    out = Tensor<T>::scalar(acc / count);
  if (tape.wants({&pred, &target})) {
    tape.record(out, [pred = pred, target = target, out, count]() mutable {
      T const g = out.grad()[0] / count;
      for (std::size_t i = 0; i < pred.numel(); ++i) {
        T const d = pred.data()[i] - target.data()[i];
        T const s = d > T(0) ? g : (d < T(0) ? -g : T(0));
        if (pred.requires_grad()) { pred.grad()[i] += s; }
        if (target.requires_grad()) { target.grad()[i] -= s; }
      }
    });
  }
  return out;
}

#define MADUN_INSTANTIATE_OPS(T)                                                                                   \
  template Tensor<T> conv2d(Tape<T> &, Tensor<T> const &, Tensor<T> const &, Tensor<T> const &);                  \
  template Tensor<T> relu(Tape<T> &, Tensor<T> const &);                                                           \
  template Tensor<T> sigmoid(Tape<T> &, Tensor<T> const &);                                                        \
  template Tensor<T> tanh(Tape<T> &, Tensor<T> const &);                                                           \
  template Tensor<T> add(Tape<T> &, Tensor<T> const &, Tensor<T> const &);                                         \
  template Tensor<T> sub(Tape<T> &, Tensor<T> const &, Tensor<T> const &);                                         \
  template Tensor<T> hadamard(Tape<T> &, Tensor<T> const &, Tensor<T> const &);                                    \
  template Tensor<T> scale(Tape<T> &, Tensor<T> const &, T);                                                       \
  template Tensor<T> scale_by(Tape<T> &, Tensor<T> const &, Tensor<T> const &);                                    \
  template Tensor<T> concat_channels(Tape<T> &, Tensor<T> const &, Tensor<T> const &);                             \
  template Tensor<T> matvec(Tape<T> &, Tensor<T> const &, Tensor<T> const &);                                      \
  template Tensor<T> matvec_transposed(Tape<T> &, Tensor<T> const &, Tensor<T> const &);                           \
  template Tensor<T> reshape(Tape<T> &, Tensor<T> const &, Shape);                                                 \
  template Tensor<T> sum(Tape<T> &, Tensor<T> const &);                                                            \
  template Tensor<T> l1_mean(Tape<T> &, Tensor<T> const &, Tensor<T> const &);

MADUN_INSTANTIATE_OPS(float)
MADUN_INSTANTIATE_OPS(double)

} // namespace madun
