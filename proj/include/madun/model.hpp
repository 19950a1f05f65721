#pragma once

#include "madun/cs_ops.hpp"
#include "madun/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace madun {

// Where the multi-channel short-term memory z is tapped: none, the head conv
// output (star), the RB1 output (circle) or the RB2 output (rb2, the default).
enum class HsmVariant { none, star, circle, rb2 };

// How memory crosses all stages: none, direct addition (plus), a merging conv
// over the concatenation (concat), or a ConvLSTM cell (lstm).
enum class ClmVariant { none, plus, concat, lstm };

enum class OperatorKind { gaussian, mri };

std::string_view to_string(HsmVariant v);
std::string_view to_string(ClmVariant v);
std::string_view to_string(OperatorKind v);
HsmVariant       parse_hsm(std::string_view s);
ClmVariant       parse_clm(std::string_view s);
OperatorKind     parse_operator_kind(std::string_view s);

struct ModelConfig
{
  std::size_t  stages = 25;
  std::size_t  channels = 32;
  HsmVariant   hsm = HsmVariant::rb2;
  ClmVariant   clm = ClmVariant::lstm;
  OperatorKind op = OperatorKind::gaussian;
  double       ratio = 0.25;

  void validate() const;
  bool operator==(ModelConfig const &) const = default;
};

template <typename T> struct ConvLayer
{
  Tensor<T> weight; // [Cout,Cin,3,3]
  Tensor<T> bias;   // [Cout]
};

template <typename T> struct ResBlockParams
{
  ConvLayer<T> first, second;
};

// Gate kernels act on the input s (w_s*) and the previous hidden state (w_h*).
// Only the input path carries a bias.
template <typename T> struct ConvLstmParams
{
  Tensor<T> w_si, w_hi, w_sf, w_hf, w_sc, w_hc, w_so, w_ho;
  Tensor<T> b_i, b_f, b_c, b_o;
};

template <typename T> struct StageParams
{
  Tensor<T>                     rho;  // [1]
  ConvLayer<T>                  head; // Conv1 (1 -> C) or Conv3 (C+1 -> C)
  ResBlockParams<T>             rb1, rb2;
  ConvLayer<T>                  tail; // Conv2 (C -> 1)
  std::optional<ConvLstmParams<T>> lstm;
  std::optional<ConvLayer<T>>   merge; // concat variant, 2C -> C
};

template <typename T> using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T> struct ModelParams
{
  ModelConfig                 config;
  std::optional<ConvLayer<T>> conv0; // z initialization, present when hsm != none
  std::vector<StageParams<T>> stages;

  // Every learnable tensor with a stable dotted name, in a fixed order.
  NamedTensors<T> named() const;
  std::size_t     count() const;
};

// rho = 1, conv weights uniform in +-1/sqrt(fan_in), biases 0.
template <typename T> ModelParams<T> init_params(ModelConfig const &config, std::uint64_t seed);

template <typename T> struct StageState
{
  Tensor<T> x;    // [N,1,H,W]
  Tensor<T> z;    // [N,C,H,W], hsm != none
  Tensor<T> h, c; // [N,C,H,W], clm != none (c only for lstm)
};

// r = x_prev - rho * A^T (A x_prev - y)
template <typename T>
Tensor<T> gdm_step(Tape<T> &tape, Tensor<T> const &x_prev, Tensor<T> const &y, MeasurementOperator<T> const &op,
                   Tensor<T> const &rho);

template <typename T> Tensor<T> conv_layer(Tape<T> &tape, Tensor<T> const &x, ConvLayer<T> const &layer);

// s + Conv(ReLU(Conv(s)))
template <typename T> Tensor<T> residual_block(Tape<T> &tape, Tensor<T> const &s, ResBlockParams<T> const &p);

template <typename T>
std::pair<Tensor<T>, Tensor<T>> conv_lstm_cell(Tape<T> &tape, Tensor<T> const &s, Tensor<T> const &h_prev,
                                               Tensor<T> const &c_prev, ConvLstmParams<T> const &p);

// One memory-augmented proximal mapping. Returns the new state; new_state.x is
// the stage output.
template <typename T>
StageState<T> proximal_forward(Tape<T> &tape, Tensor<T> const &r, StageState<T> const &state,
                               StageParams<T> const &params, ModelConfig const &config);

template <typename T> struct ForwardResult
{
  Tensor<T>                  output;
  std::vector<StageState<T>> trajectory; // states 0..K when recorded
};

template <typename T>
ForwardResult<T> model_forward(Tape<T> &tape, Tensor<T> const &y, MeasurementOperator<T> const &op,
                               ModelParams<T> const &params, bool record_trajectory = false);

} // namespace madun
