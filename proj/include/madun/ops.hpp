#pragma once

#include "madun/tensor.hpp"

namespace madun {

// Differentiable primitives. Binary ops need identical shapes; there is no
// broadcasting.

// Same-padded (zero) cross-correlation, stride 1. input [N,Cin,H,W],
// kernel [Cout,Cin,kh,kw] with odd kh/kw, bias [Cout] or undefined.
template <typename T>
Tensor<T> conv2d(Tape<T> &tape, Tensor<T> const &input, Tensor<T> const &kernel, Tensor<T> const &bias = {});

template <typename T> Tensor<T> relu(Tape<T> &tape, Tensor<T> const &x);
template <typename T> Tensor<T> sigmoid(Tape<T> &tape, Tensor<T> const &x);
template <typename T> Tensor<T> tanh(Tape<T> &tape, Tensor<T> const &x);

template <typename T> Tensor<T> add(Tape<T> &tape, Tensor<T> const &a, Tensor<T> const &b);
template <typename T> Tensor<T> sub(Tape<T> &tape, Tensor<T> const &a, Tensor<T> const &b);
template <typename T> Tensor<T> hadamard(Tape<T> &tape, Tensor<T> const &a, Tensor<T> const &b);
template <typename T> Tensor<T> scale(Tape<T> &tape, Tensor<T> const &x, T factor);
// factor is a single-element tensor; differentiable in both arguments.
template <typename T> Tensor<T> scale_by(Tape<T> &tape, Tensor<T> const &x, Tensor<T> const &factor);

// [N,Ca,H,W] ++ [N,Cb,H,W] -> [N,Ca+Cb,H,W]. Either side may have 0 channels.
template <typename T> Tensor<T> concat_channels(Tape<T> &tape, Tensor<T> const &a, Tensor<T> const &b);

// matrix [M,N] times v [N] -> [M], or each row of v [B,N] -> [B,M].
template <typename T> Tensor<T> matvec(Tape<T> &tape, Tensor<T> const &matrix, Tensor<T> const &v);
// Transposed product: matrix [M,N], u [M] -> [N] or [B,M] -> [B,N].
template <typename T> Tensor<T> matvec_transposed(Tape<T> &tape, Tensor<T> const &matrix, Tensor<T> const &u);

template <typename T> Tensor<T> reshape(Tape<T> &tape, Tensor<T> const &x, Shape shape);

template <typename T> Tensor<T> sum(Tape<T> &tape, Tensor<T> const &x);

// mean |pred - target| over all elements; subgradient 0 at ties.
template <typename T> Tensor<T> l1_mean(Tape<T> &tape, Tensor<T> const &pred, Tensor<T> const &target);

void check_same_shape(Shape const &a, Shape const &b, char const *op);

} // namespace madun
