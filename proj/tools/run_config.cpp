#include "run_config.hpp"

#include "madun/checkpoint.hpp"
#include "madun/error.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdlib>
#include <fmt/format.h>
#include <functional>
#include <map>

namespace madun::cli {

namespace pt = boost::property_tree;

ModelConfig RunConfig::desk_model()
{
  ModelConfig m;
  m.stages = 9;
  m.channels = 16;
  return m;
}

TrainConfig RunConfig::desk_train()
{
  TrainConfig t;
  t.epochs_phase1 = 20;
  return t;
}

void RunConfig::validate() const
{
  model.validate();
  train.validate();
  if (eval_stride == 0) { throw ConfigError("eval stride must be positive"); }
  if (bins == 0) { throw ConfigError("bins must be positive"); }
}

nlohmann::json RunConfig::to_json() const
{
  return {{"model", madun::to_json(model)},
          {"train", madun::to_json(train)},
          {"paths",
           {{"data", data.string()},
            {"data_phase2", data_phase2.string()},
            {"eval", eval_data.string()},
            {"checkpoint", checkpoint.string()},
            {"operator", operator_file.string()},
            {"mask", mask.string()},
            {"output", output.string()}}},
          {"eval", {{"stride", eval_stride}, {"bins", bins}}},
          {"log", {{"save_every", save_every}, {"log_every", log_every}}}};
}

namespace {

template <typename N> N parse_number(std::string const &key, std::string const &text)
{
  N          value{};
  auto const end = text.data() + text.size();
  auto const [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) { throw ConfigError(fmt::format("{}: cannot parse '{}'", key, text)); }
  return value;
}

bool parse_bool(std::string const &key, std::string const &text)
{
  if (text == "true" || text == "1" || text == "yes" || text == "on") { return true; }
  if (text == "false" || text == "0" || text == "no" || text == "off") { return false; }
  throw ConfigError(fmt::format("{}: expected a boolean, got '{}'", key, text));
}

using Setter = std::function<void(RunConfig &, std::string const &key, std::string const &value)>;

template <typename N> Setter number_field(N RunConfig::*outer)
{
  return [outer](RunConfig &c, std::string const &k, std::string const &v) { c.*outer = parse_number<N>(k, v); };
}

template <typename N> Setter model_number(N ModelConfig::*field)
{
  return [field](RunConfig &c, std::string const &k, std::string const &v) { c.model.*field = parse_number<N>(k, v); };
}

template <typename N> Setter train_number(N TrainConfig::*field)
{
  return [field](RunConfig &c, std::string const &k, std::string const &v) { c.train.*field = parse_number<N>(k, v); };
}

Setter train_bool(bool TrainConfig::*field)
{
  return [field](RunConfig &c, std::string const &k, std::string const &v) { c.train.*field = parse_bool(k, v); };
}

Setter path_field(std::filesystem::path RunConfig::*field)
{
  return [field](RunConfig &c, std::string const &, std::string const &v) { c.*field = v; };
}

std::map<std::string, Setter> const &setters()
{
  static std::map<std::string, Setter> const table{
    {"model.stages", model_number(&ModelConfig::stages)},
    {"model.channels", model_number(&ModelConfig::channels)},
    {"model.ratio", model_number(&ModelConfig::ratio)},
    {"model.hsm", [](RunConfig &c, auto const &, auto const &v) { c.model.hsm = parse_hsm(v); }},
    {"model.clm", [](RunConfig &c, auto const &, auto const &v) { c.model.clm = parse_clm(v); }},
    {"model.operator", [](RunConfig &c, auto const &, auto const &v) { c.model.op = parse_operator_kind(v); }},
    {"train.lr", train_number(&TrainConfig::lr)},
    {"train.batch", train_number(&TrainConfig::batch)},
    {"train.beta1", train_number(&TrainConfig::beta1)},
    {"train.beta2", train_number(&TrainConfig::beta2)},
    {"train.eps", train_number(&TrainConfig::eps)},
    {"train.epochs", train_number(&TrainConfig::epochs_phase1)},
    {"train.epochs_phase2", train_number(&TrainConfig::epochs_phase2)},
    {"train.block", train_number(&TrainConfig::block)},
    {"train.stride", train_number(&TrainConfig::stride)},
    {"train.block_phase2", train_number(&TrainConfig::block_phase2)},
    {"train.crop_stride_phase2", train_number(&TrainConfig::crop_stride_phase2)},
    {"train.stride_phase2", train_number(&TrainConfig::stride_phase2)},
    {"train.augment", train_bool(&TrainConfig::augment)},
    {"train.learnable_phi", train_bool(&TrainConfig::learnable_phi)},
    {"train.seed", train_number(&TrainConfig::seed)},
    {"train.save_every", number_field(&RunConfig::save_every)},
    {"train.log_every", number_field(&RunConfig::log_every)},
    {"eval.stride", number_field(&RunConfig::eval_stride)},
    {"eval.bins", number_field(&RunConfig::bins)},
    {"paths.data", path_field(&RunConfig::data)},
    {"paths.data_phase2", path_field(&RunConfig::data_phase2)},
    {"paths.eval", path_field(&RunConfig::eval_data)},
    {"paths.checkpoint", path_field(&RunConfig::checkpoint)},
    {"paths.operator", path_field(&RunConfig::operator_file)},
    {"paths.mask", path_field(&RunConfig::mask)},
    {"paths.output", path_field(&RunConfig::output)},
  };
  return table;
}

} // namespace

void apply_ini(RunConfig &config, std::filesystem::path const &path)
{
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (pt::ini_parser_error const &e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.message()));
  }
  for (auto const &[section, entries] : tree) {
    if (!entries.data().empty()) {
      throw ConfigError(fmt::format("{}: key '{}' must be inside a section", path.string(), section));
    }
    for (auto const &[key, value] : entries) {
      auto const full = section + "." + key;
      auto const it = setters().find(full);
      if (it == setters().end()) { throw ConfigError(fmt::format("{}: unknown key '{}'", path.string(), full)); }
      try {
        it->second(config, full, value.data());
      } catch (ConfigError const &e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
      }
    }
  }
}

std::optional<std::string> apply_seed_env(RunConfig &config)
{
  char const *raw = std::getenv("MADUN_SEED");
  if (!raw) { return std::nullopt; }
  config.train.seed = parse_number<std::uint64_t>("MADUN_SEED", raw);
  return std::string(raw);
}

} // namespace madun::cli
