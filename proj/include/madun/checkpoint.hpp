#pragma once

#include "madun/binding.hpp"
#include "madun/model.hpp"
#include "madun/trainer.hpp"

#include <filesystem>
#include <nlohmann/json.hpp>

namespace madun {

// Container layout: "MADN", u32 version, u64 header length, UTF-8 JSON header,
// then the raw little-endian tensor payload. The header lists every tensor's
// name, shape, dtype, byte offset and byte length relative to the payload.
inline constexpr std::uint32_t archive_version = 1;

template <typename T> struct Archive
{
  nlohmann::json  meta = nlohmann::json::object();
  NamedTensors<T> tensors;

  Tensor<T> const *find(std::string_view name) const;
  Tensor<T> const &at(std::string_view name) const; // LoadError when absent
};

template <typename T> void       write_archive(std::filesystem::path const &path, Archive<T> const &archive);
// Tensors stored in the other precision are converted on load.
template <typename T> Archive<T> read_archive(std::filesystem::path const &path);

nlohmann::json to_json(ModelConfig const &config);
ModelConfig    model_config_from_json(nlohmann::json const &j);
nlohmann::json to_json(TrainConfig const &config);
TrainConfig    train_config_from_json(nlohmann::json const &j);
nlohmann::json to_json(TrainHistory const &history);
TrainHistory   history_from_json(nlohmann::json const &j);

template <typename T> struct Checkpoint
{
  ModelParams<T>     params;
  OperatorBinding<T> binding;
  TrainConfig        train;
  TrainHistory       history;
  std::size_t        step = 0;
  std::size_t        adam_step = 0;
  NamedTensors<T>    adam_m, adam_v; // keyed like the optimizer's parameter list
};

template <typename T> void          save_checkpoint(std::filesystem::path const &path, Checkpoint<T> const &ckpt);
template <typename T> Checkpoint<T> load_checkpoint(std::filesystem::path const &path);

// Operator-only files written by `gen-operator`.
template <typename T> void save_operator(std::filesystem::path const &path, OperatorBinding<T> const &binding);
template <typename T> OperatorBinding<T> load_operator(std::filesystem::path const &path);

// ConfigError describing the first differing field.
void require_same_config(ModelConfig const &found, ModelConfig const &expected);

} // namespace madun
