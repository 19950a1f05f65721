#include "madun/model.hpp"

#include "madun/error.hpp"
#include "madun/ops.hpp"

#include <array>
#include <cmath>
#include <fmt/format.h>
#include <random>

namespace madun {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, std::array<std::pair<std::string_view, E>, N> const &table, char const *what)
{
  for (auto const &[name, value] : table) {
    if (name == s) { return value; }
  }
  throw ConfigError(fmt::format("unknown {} '{}'", what, s));
}

constexpr std::array<std::pair<std::string_view, HsmVariant>, 4> hsm_names{{{"none", HsmVariant::none},
                                                                             {"star", HsmVariant::star},
                                                                             {"circle", HsmVariant::circle},
                                                                             {"rb2", HsmVariant::rb2}}};
constexpr std::array<std::pair<std::string_view, ClmVariant>, 4> clm_names{{{"none", ClmVariant::none},
                                                                             {"plus", ClmVariant::plus},
                                                                             {"concat", ClmVariant::concat},
                                                                             {"lstm", ClmVariant::lstm}}};
constexpr std::array<std::pair<std::string_view, OperatorKind>, 2> op_names{
  {{"gaussian", OperatorKind::gaussian}, {"mri", OperatorKind::mri}}};

} // namespace

std::string_view to_string(HsmVariant v) { return hsm_names[static_cast<std::size_t>(v)].first; }
std::string_view to_string(ClmVariant v) { return clm_names[static_cast<std::size_t>(v)].first; }
std::string_view to_string(OperatorKind v) { return op_names[static_cast<std::size_t>(v)].first; }
HsmVariant       parse_hsm(std::string_view s) { return parse_enum(s, hsm_names, "HSM variant"); }
ClmVariant       parse_clm(std::string_view s) { return parse_enum(s, clm_names, "CLM variant"); }
OperatorKind     parse_operator_kind(std::string_view s) { return parse_enum(s, op_names, "operator kind"); }

void ModelConfig::validate() const
{
  if (stages < 1) { throw ConfigError("model needs at least one stage"); }
  if (channels < 1) { throw ConfigError("model needs at least one feature channel"); }
  if (!(ratio > 0.0 && ratio <= 1.0)) { throw ConfigError(fmt::format("CS ratio {} outside (0, 1]", ratio)); }
}

template <typename T> NamedTensors<T> ModelParams<T>::named() const
{
  NamedTensors<T> out;
  auto            conv = [&out](std::string const &prefix, ConvLayer<T> const &layer) {
    out.emplace_back(prefix + ".weight", layer.weight);
    if (layer.bias.defined()) { out.emplace_back(prefix + ".bias", layer.bias); }
  };
  if (conv0) { conv("conv0", *conv0); }
  for (std::size_t k = 0; k < stages.size(); ++k) {
    auto const &s = stages[k];
    auto const  p = fmt::format("stage{}", k + 1);
    out.emplace_back(p + ".rho", s.rho);
    conv(p + ".head", s.head);
    conv(p + ".rb1.first", s.rb1.first);
    conv(p + ".rb1.second", s.rb1.second);
    if (s.lstm) {
      auto const &l = *s.lstm;
      std::array<std::pair<char const *, Tensor<T> const *>, 12> const items{{{"w_si", &l.w_si},
                                                                               {"w_hi", &l.w_hi},
                                                                               {"w_sf", &l.w_sf},
                                                                               {"w_hf", &l.w_hf},
                                                                               {"w_sc", &l.w_sc},
                                                                               {"w_hc", &l.w_hc},
                                                                               {"w_so", &l.w_so},
                                                                               {"w_ho", &l.w_ho},
                                                                               {"b_i", &l.b_i},
                                                                               {"b_f", &l.b_f},
                                                                               {"b_c", &l.b_c},
                                                                               {"b_o", &l.b_o}}};
      for (auto const &[name, t] : items) {
        out.emplace_back(p + ".lstm." + name, *t);
      }
    }
    if (s.merge) { conv(p + ".merge", *s.merge); }
    conv(p + ".rb2.first", s.rb2.first);
    conv(p + ".rb2.second", s.rb2.second);
    conv(p + ".tail", s.tail);
  }
  return out;
}

template <typename T> std::size_t ModelParams<T>::count() const
{
  std::size_t total = 0;
  for (auto const &[name, t] : named()) {
    total += t.numel();
  }
  return total;
}

template <typename T> ModelParams<T> init_params(ModelConfig const &config, std::uint64_t seed)
{
  config.validate();
  std::mt19937_64 rng(seed);
  auto kernel = [&rng](std::size_t cout, std::size_t cin) {
    double const                           bound = 1.0 / std::sqrt(static_cast<double>(cin * 9));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<T>                              w({cout, cin, 3, 3}, true);
    for (T &v : w.data()) {
      v = static_cast<T>(u(rng));
    }
    return w;
  };
  auto bias = [](std::size_t cout) { return Tensor<T>({cout}, true); };
  auto conv = [&](std::size_t cout, std::size_t cin) { return ConvLayer<T>{kernel(cout, cin), bias(cout)}; };

  std::size_t const C = config.channels;
  bool const        hsm = config.hsm != HsmVariant::none;
  ModelParams<T>    params;
  params.config = config;
  if (hsm) { params.conv0 = conv(C, 1); }
  for (std::size_t k = 0; k < config.stages; ++k) {
    StageParams<T> s;
    s.rho = Tensor<T>::scalar(T(1), true);
    s.head = conv(C, hsm ? C + 1 : 1);
    s.rb1 = {conv(C, C), conv(C, C)};
    if (config.clm == ClmVariant::lstm) {
      ConvLstmParams<T> l;
      l.w_si = kernel(C, C);
      l.w_hi = kernel(C, C);
      l.w_sf = kernel(C, C);
      l.w_hf = kernel(C, C);
      l.w_sc = kernel(C, C);
      l.w_hc = kernel(C, C);
      l.w_so = kernel(C, C);
      l.w_ho = kernel(C, C);
      l.b_i = bias(C);
      l.b_f = bias(C);
      l.b_c = bias(C);
      l.b_o = bias(C);
      s.lstm = std::move(l);
    }
    if (config.clm == ClmVariant::concat) { s.merge = conv(C, 2 * C); }
    s.rb2 = {conv(C, C), conv(C, C)};
    s.tail = conv(1, C);
    params.stages.push_back(std::move(s));
  }
  return params;
}

template <typename T>
Tensor<T> gdm_step(Tape<T> &tape, Tensor<T> const &x_prev, Tensor<T> const &y, MeasurementOperator<T> const &op,
                   Tensor<T> const &rho)
{
  auto const residual = sub(tape, op.measure(tape, x_prev), y);
  auto const step = op.adjoint(tape, residual);
  check_same_shape(step.shape(), x_prev.shape(), "gdm_step");
  return sub(tape, x_prev, scale_by(tape, step, rho));
}

template <typename T> Tensor<T> conv_layer(Tape<T> &tape, Tensor<T> const &x, ConvLayer<T> const &layer)
{
  return conv2d(tape, x, layer.weight, layer.bias);
}

template <typename T> Tensor<T> residual_block(Tape<T> &tape, Tensor<T> const &s, ResBlockParams<T> const &p)
{
  auto const inner = relu(tape, conv_layer(tape, s, p.first));
  return add(tape, s, conv_layer(tape, inner, p.second));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> conv_lstm_cell(Tape<T> &tape, Tensor<T> const &s, Tensor<T> const &h_prev,
                                               Tensor<T> const &c_prev, ConvLstmParams<T> const &p)
{
  check_same_shape(s.shape(), h_prev.shape(), "conv_lstm_cell");
  check_same_shape(s.shape(), c_prev.shape(), "conv_lstm_cell");
  auto gate = [&](Tensor<T> const &ws, Tensor<T> const &wh, Tensor<T> const &b) {
    return add(tape, conv2d(tape, s, ws, b), conv2d(tape, h_prev, wh));
  };
  auto const i = sigmoid(tape, gate(p.w_si, p.w_hi, p.b_i));
  auto const f = sigmoid(tape, gate(p.w_sf, p.w_hf, p.b_f));
  auto const g = tanh(tape, gate(p.w_sc, p.w_hc, p.b_c));
  auto const o = sigmoid(tape, gate(p.w_so, p.w_ho, p.b_o));
  auto const c = add(tape, hadamard(tape, f, c_prev), hadamard(tape, i, g));
  auto const h = hadamard(tape, o, tanh(tape, c));
  return {h, c};
}

template <typename T>
StageState<T> proximal_forward(Tape<T> &tape, Tensor<T> const &r, StageState<T> const &state,
                               StageParams<T> const &params, ModelConfig const &config)
{
  bool const hsm = config.hsm != HsmVariant::none;
  if (hsm && !state.z.defined()) { throw ContractError("HSM variant needs the previous short-term memory z"); }
  if (config.clm != ClmVariant::none && !state.h.defined()) {
    throw ContractError("CLM variant needs the previous hidden state h");
  }
  if (config.clm == ClmVariant::lstm && (!state.c.defined() || !params.lstm)) {
    throw ContractError("ConvLSTM variant needs the previous cell state and gate parameters");
  }
  if (config.clm == ClmVariant::concat && !params.merge) { throw ContractError("concat variant needs merge parameters"); }

  StageState<T> next;
  auto const    features = conv_layer(tape, hsm ? concat_channels(tape, r, state.z) : r, params.head);
  if (config.hsm == HsmVariant::star) { next.z = features; }
  auto s = residual_block(tape, features, params.rb1);
  if (config.hsm == HsmVariant::circle) { next.z = s; }

  switch (config.clm) {
  case ClmVariant::none: break;
  case ClmVariant::plus:
    s = add(tape, s, state.h);
    next.h = s;
    break;
  case ClmVariant::concat:
    s = conv_layer(tape, concat_channels(tape, s, state.h), *params.merge);
    next.h = s;
    break;
  case ClmVariant::lstm: {
    auto [h, c] = conv_lstm_cell(tape, s, state.h, state.c, *params.lstm);
    s = h;
    next.h = std::move(h);
    next.c = std::move(c);
    break;
  }
  }

  auto const deep = residual_block(tape, s, params.rb2);
  if (config.hsm == HsmVariant::rb2) { next.z = deep; }
  next.x = add(tape, r, conv_layer(tape, deep, params.tail));
  return next;
}

template <typename T>
ForwardResult<T> model_forward(Tape<T> &tape, Tensor<T> const &y, MeasurementOperator<T> const &op,
                               ModelParams<T> const &params, bool record_trajectory)
{
  auto const   &config = params.config;
  StageState<T> state;
  state.x = op.adjoint(tape, y);
  Shape const memory_shape{state.x.dim(0), config.channels, state.x.dim(2), state.x.dim(3)};
  if (config.hsm != HsmVariant::none) {
    if (!params.conv0) { throw ContractError("HSM variant needs conv0 parameters"); }
    state.z = conv_layer(tape, state.x, *params.conv0);
  }
  if (config.clm != ClmVariant::none) { state.h = Tensor<T>(memory_shape); }
  if (config.clm == ClmVariant::lstm) { state.c = Tensor<T>(memory_shape); }

  ForwardResult<T> result;
  if (record_trajectory) { result.trajectory.push_back(state); }
  for (auto const &stage : params.stages) {
    auto const r = gdm_step(tape, state.x, y, op, stage.rho);
    state = proximal_forward(tape, r, state, stage, config);
    if (record_trajectory) { result.trajectory.push_back(state); }
  }
  result.output = state.x;
  return result;
}

#define MADUN_INSTANTIATE_MODEL(T)                                                                                 \
  template struct ModelParams<T>;                                                                                  \
  template ModelParams<T> init_params<T>(ModelConfig const &, std::uint64_t);                                      \
  template Tensor<T> gdm_step(Tape<T> &, Tensor<T> const &, Tensor<T> const &, MeasurementOperator<T> const &,     \
                              Tensor<T> const &);                                                                  \
  template Tensor<T> conv_layer(Tape<T> &, Tensor<T> const &, ConvLayer<T> const &);                               \
  template Tensor<T> residual_block(Tape<T> &, Tensor<T> const &, ResBlockParams<T> const &);                      \
  template std::pair<Tensor<T>, Tensor<T>> conv_lstm_cell(Tape<T> &, Tensor<T> const &, Tensor<T> const &,         \
                                                          Tensor<T> const &, ConvLstmParams<T> const &);           \
  template StageState<T> proximal_forward(Tape<T> &, Tensor<T> const &, StageState<T> const &,                     \
                                          StageParams<T> const &, ModelConfig const &);                            \
  template ForwardResult<T> model_forward(Tape<T> &, Tensor<T> const &, MeasurementOperator<T> const &,            \
                                          ModelParams<T> const &, bool);

MADUN_INSTANTIATE_MODEL(float)
MADUN_INSTANTIATE_MODEL(double)

} // namespace madun
