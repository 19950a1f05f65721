#pragma once

#include "madun/model.hpp"
#include "madun/trainer.hpp"

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

namespace madun::cli {

// Everything a command needs, resolved in this order (later wins):
// built-in defaults, the INI file given by --config, MADUN_SEED, flags.
struct RunConfig
{
  ModelConfig model = desk_model();
  TrainConfig train = desk_train();

  std::filesystem::path data;        // phase-1 training images
  std::filesystem::path data_phase2; // defaults to `data`
  std::filesystem::path eval_data;   // evaluation images for `ablate`
  std::filesystem::path checkpoint;
  std::filesystem::path operator_file;
  std::filesystem::path mask;        // MRI mask PGM for `gen-operator`
  std::filesystem::path output = "out";

  std::size_t eval_stride = 22;
  std::size_t save_every = 100; // steps between checkpoints, 0 = only at the end
  std::size_t log_every = 50;
  std::size_t bins = 32;

  static ModelConfig desk_model();
  static TrainConfig desk_train();

  void           validate() const;
  nlohmann::json to_json() const;
};

// Applies every key of an INI file onto `config`. Unknown sections or keys
// and unparsable values raise ConfigError naming the key.
void apply_ini(RunConfig &config, std::filesystem::path const &path);

// Applies MADUN_SEED when it is set; returns the raw value.
std::optional<std::string> apply_seed_env(RunConfig &config);

} // namespace madun::cli
