#include "madun/checkpoint.hpp"

#include "madun/error.hpp"

#include <bit>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <map>

namespace madun {

static_assert(std::endian::native == std::endian::little, "payload is written in host order");

using nlohmann::json;

namespace {

constexpr char magic[4] = {'M', 'A', 'D', 'N'};

template <typename T> constexpr char const *dtype_name() { return sizeof(T) == 4 ? "f32" : "f64"; }

template <typename U> void put(std::ostream &out, U value)
{
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  }
  out.write(reinterpret_cast<char const *>(bytes), sizeof(U));
}

template <typename U> U get(std::string const &buf, std::size_t at)
{
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
  }
  return value;
}

template <typename Src, typename T> void convert_into(char const *bytes, std::span<T> dst)
{
  for (std::size_t i = 0; i < dst.size(); ++i) {
    Src v;
    std::memcpy(&v, bytes + i * sizeof(Src), sizeof(Src));
    dst[i] = static_cast<T>(v);
  }
}

} // namespace

template <typename T> Tensor<T> const *Archive<T>::find(std::string_view name) const
{
  for (auto const &[n, t] : tensors) {
    if (n == name) { return &t; }
  }
  return nullptr;
}

template <typename T> Tensor<T> const &Archive<T>::at(std::string_view name) const
{
  if (auto const *t = find(name)) { return *t; }
  throw LoadError(fmt::format("archive has no tensor '{}'", name));
}

template <typename T> void write_archive(std::filesystem::path const &path, Archive<T> const &archive)
{
  json        entries = json::array();
  std::size_t offset = 0;
  for (auto const &[name, t] : archive.tensors) {
    std::size_t const length = t.numel() * sizeof(T);
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", dtype_name<T>()}, {"offset", offset},
                       {"length", length}});
    offset += length;
  }
  json const        header{{"meta", archive.meta}, {"tensors", entries}};
  std::string const text = header.dump();

  // Write to a sibling file first so an interrupted save never clobbers a good file.
  auto const    tmp = std::filesystem::path(path.string() + ".tmp");
  std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
  if (!out) { throw DataError(fmt::format("cannot write {}", tmp.string())); }
  out.write(magic, sizeof magic);
  put<std::uint32_t>(out, archive_version);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (auto const &[name, t] : archive.tensors) {
    out.write(reinterpret_cast<char const *>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
  }
  out.close();
  if (!out) { throw DataError(fmt::format("failed writing {}", tmp.string())); }
  std::filesystem::rename(tmp, path);
}

template <typename T> Archive<T> read_archive(std::filesystem::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw LoadError(fmt::format("cannot open {}", path.string())); }
  std::string const buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::size_t const preamble = sizeof magic + 4 + 8;
  if (buf.size() < preamble) { throw LoadError(fmt::format("{}: truncated preamble", path.string())); }
  if (std::memcmp(buf.data(), magic, sizeof magic) != 0) {
    throw LoadError(fmt::format("{}: not a model archive (bad magic)", path.string()));
  }
  auto const version = get<std::uint32_t>(buf, 4);
  if (version != archive_version) {
    throw LoadError(fmt::format("{}: unsupported format version {} (expected {})", path.string(), version,
                                archive_version));
  }
  auto const header_len = get<std::uint64_t>(buf, 8);
  if (header_len > buf.size() - preamble) { throw LoadError(fmt::format("{}: truncated header", path.string())); }

  json header;
  try {
    header = json::parse(buf.substr(preamble, header_len));
  } catch (json::exception const &e) {
    throw LoadError(fmt::format("{}: corrupt header ({})", path.string(), e.what()));
  }

  Archive<T>        archive;
  std::size_t const payload = preamble + header_len;
  std::size_t const available = buf.size() - payload;
  try {
    archive.meta = header.at("meta");
    for (auto const &e : header.at("tensors")) {
      auto const name = e.at("name").get<std::string>();
      auto const shape = e.at("shape").get<Shape>();
      auto const dtype = e.at("dtype").get<std::string>();
      auto const offset = e.at("offset").get<std::size_t>();
      auto const length = e.at("length").get<std::size_t>();
      std::size_t const width = dtype == "f32" ? 4 : dtype == "f64" ? 8 : 0;
      if (width == 0) { throw LoadError(fmt::format("{}: tensor {} has unknown dtype {}", path.string(), name, dtype)); }
      if (length != numel(shape) * width) {
        throw LoadError(fmt::format("{}: tensor {} length {} disagrees with shape {}", path.string(), name, length,
                                    to_string(shape)));
      }
      if (offset > available || length > available - offset) {
        throw LoadError(fmt::format("{}: truncated payload at tensor {}", path.string(), name));
      }
      Tensor<T>   t(shape);
      char const *bytes = buf.data() + payload + offset;
      if (width == 4) {
        convert_into<float>(bytes, t.data());
      } else {
        convert_into<double>(bytes, t.data());
      }
      archive.tensors.emplace_back(name, std::move(t));
    }
  } catch (json::exception const &e) {
    throw LoadError(fmt::format("{}: malformed header ({})", path.string(), e.what()));
  }
  return archive;
}

// ---------------------------------------------------------------- json

json to_json(ModelConfig const &c)
{
  return {{"stages", c.stages}, {"channels", c.channels},       {"hsm", to_string(c.hsm)},
          {"clm", to_string(c.clm)}, {"operator", to_string(c.op)}, {"ratio", c.ratio}};
}

ModelConfig model_config_from_json(json const &j)
{
  ModelConfig c;
  c.stages = j.at("stages").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.hsm = parse_hsm(j.at("hsm").get<std::string>());
  c.clm = parse_clm(j.at("clm").get<std::string>());
  c.op = parse_operator_kind(j.at("operator").get<std::string>());
  c.ratio = j.at("ratio").get<double>();
  return c;
}

json to_json(TrainConfig const &c)
{
  return {{"lr", c.lr},
          {"batch", c.batch},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"epochs_phase1", c.epochs_phase1},
          {"epochs_phase2", c.epochs_phase2},
          {"block", c.block},
          {"stride", c.stride},
          {"block_phase2", c.block_phase2},
          {"crop_stride_phase2", c.crop_stride_phase2},
          {"stride_phase2", c.stride_phase2},
          {"augment", c.augment},
          {"learnable_phi", c.learnable_phi},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(json const &j)
{
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.batch = j.at("batch").get<std::size_t>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.epochs_phase1 = j.at("epochs_phase1").get<std::size_t>();
  c.epochs_phase2 = j.at("epochs_phase2").get<std::size_t>();
  c.block = j.at("block").get<std::size_t>();
  c.stride = j.at("stride").get<std::size_t>();
  c.block_phase2 = j.at("block_phase2").get<std::size_t>();
  c.crop_stride_phase2 = j.at("crop_stride_phase2").get<std::size_t>();
  c.stride_phase2 = j.at("stride_phase2").get<std::size_t>();
  c.augment = j.at("augment").get<bool>();
  c.learnable_phi = j.at("learnable_phi").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json to_json(TrainHistory const &h)
{
  json epochs = json::array();
  for (auto const &e : h.epochs) {
    epochs.push_back({{"phase", e.phase}, {"epoch", e.epoch}, {"mean_loss", e.mean_loss}});
  }
  return {{"step_loss", h.step_loss}, {"epochs", epochs}};
}

TrainHistory history_from_json(json const &j)
{
  TrainHistory h;
  h.step_loss = j.at("step_loss").get<std::vector<double>>();
  for (auto const &e : j.at("epochs")) {
    h.epochs.push_back(
      {e.at("phase").get<std::size_t>(), e.at("epoch").get<std::size_t>(), e.at("mean_loss").get<double>()});
  }
  return h;
}

void require_same_config(ModelConfig const &found, ModelConfig const &expected)
{
  auto mismatch = [](char const *field, auto const &a, auto const &b) {
    return ConfigError(fmt::format("checkpoint has {}={}, run expects {}={}", field, a, field, b));
  };
  if (found.stages != expected.stages) { throw mismatch("stages", found.stages, expected.stages); }
  if (found.channels != expected.channels) { throw mismatch("channels", found.channels, expected.channels); }
  if (found.hsm != expected.hsm) { throw mismatch("hsm", to_string(found.hsm), to_string(expected.hsm)); }
  if (found.clm != expected.clm) { throw mismatch("clm", to_string(found.clm), to_string(expected.clm)); }
  if (found.op != expected.op) { throw mismatch("operator", to_string(found.op), to_string(expected.op)); }
}

// ----------------------------------------------------------- operators

namespace {

template <typename T> json operator_meta(OperatorBinding<T> const &b)
{
  json j{{"kind", to_string(b.kind)}, {"ratio", b.ratio()}};
  if (b.gaussian) { j["seed"] = b.gaussian->seed(); }
  return j;
}

template <typename T> void add_operator_tensors(Archive<T> &a, OperatorBinding<T> const &b)
{
  if (b.kind == OperatorKind::gaussian) {
    if (!b.gaussian) { throw ContractError("Gaussian binding without a matrix"); }
    a.tensors.emplace_back("operator.phi", b.gaussian->phi());
  } else {
    if (!b.mri) { throw ContractError("MRI binding without a mask"); }
    a.tensors.emplace_back("operator.mask", b.mri->mask());
  }
}

template <typename T> OperatorBinding<T> binding_from(Archive<T> const &a, std::filesystem::path const &path)
{
  if (!a.meta.contains("operator")) { throw LoadError(fmt::format("{}: no operator section", path.string())); }
  json const &m = a.meta.at("operator");
  try {
    auto const kind = parse_operator_kind(m.at("kind").get<std::string>());
    if (kind == OperatorKind::mri) { return OperatorBinding<T>::from(MriOperator<T>(a.at("operator.mask").clone())); }
    return OperatorBinding<T>::from(GaussianOperator<T>::from_matrix(a.at("operator.phi").clone(),
                                                                     m.at("ratio").get<double>(),
                                                                     m.value("seed", std::uint64_t{0})));
  } catch (json::exception const &e) {
    throw LoadError(fmt::format("{}: malformed operator section ({})", path.string(), e.what()));
  }
}

} // namespace

template <typename T> void save_operator(std::filesystem::path const &path, OperatorBinding<T> const &binding)
{
  Archive<T> a;
  a.meta = {{"kind", "operator"}, {"operator", operator_meta(binding)}};
  add_operator_tensors(a, binding);
  write_archive(path, a);
}

template <typename T> OperatorBinding<T> load_operator(std::filesystem::path const &path)
{
  return binding_from(read_archive<T>(path), path);
}

// ---------------------------------------------------------- checkpoint

template <typename T> void save_checkpoint(std::filesystem::path const &path, Checkpoint<T> const &ckpt)
{
  Archive<T> a;
  json       adam_names = json::array();
  for (auto const &[name, t] : ckpt.adam_m) {
    adam_names.push_back(name);
  }
  a.meta = {{"kind", "checkpoint"},
            {"model", to_json(ckpt.params.config)},
            {"train", to_json(ckpt.train)},
            {"history", to_json(ckpt.history)},
            {"step", ckpt.step},
            {"adam_step", ckpt.adam_step},
            {"adam_names", adam_names},
            {"operator", operator_meta(ckpt.binding)}};
  for (auto const &[name, t] : ckpt.params.named()) {
    a.tensors.emplace_back("param." + name, t);
  }
  add_operator_tensors(a, ckpt.binding);
  for (auto const &[name, t] : ckpt.adam_m) {
    a.tensors.emplace_back("adam.m." + name, t);
  }
  for (auto const &[name, t] : ckpt.adam_v) {
    a.tensors.emplace_back("adam.v." + name, t);
  }
  write_archive(path, a);
}

template <typename T> Checkpoint<T> load_checkpoint(std::filesystem::path const &path)
{
  auto const    a = read_archive<T>(path);
  Checkpoint<T> ckpt;
  json const   &meta = a.meta;
  try {
    if (meta.value("kind", std::string{}) != "checkpoint") {
      throw LoadError(fmt::format("{}: not a checkpoint", path.string()));
    }
    ckpt.params = init_params<T>(model_config_from_json(meta.at("model")), 0);
    ckpt.train = train_config_from_json(meta.at("train"));
    ckpt.history = history_from_json(meta.at("history"));
    ckpt.step = meta.at("step").get<std::size_t>();
    ckpt.adam_step = meta.at("adam_step").get<std::size_t>();
    for (auto const &name : meta.at("adam_names")) {
      auto const n = name.get<std::string>();
      ckpt.adam_m.emplace_back(n, a.at("adam.m." + n));
      ckpt.adam_v.emplace_back(n, a.at("adam.v." + n));
    }
  } catch (json::exception const &e) {
    throw LoadError(fmt::format("{}: malformed checkpoint header ({})", path.string(), e.what()));
  }
  for (auto &[name, t] : ckpt.params.named()) {
    auto const &stored = a.at("param." + name);
    if (stored.shape() != t.shape()) {
      throw LoadError(fmt::format("{}: parameter {} has shape {}, expected {}", path.string(), name,
                                  to_string(stored.shape()), to_string(t.shape())));
    }
    t.copy_from(stored);
  }
  ckpt.binding = binding_from(a, path);
  return ckpt;
}

#define MADUN_INSTANTIATE_ARCHIVE(T)                                                                               \
  template struct Archive<T>;                                                                                      \
  template void               write_archive(std::filesystem::path const &, Archive<T> const &);                   \
  template Archive<T>         read_archive(std::filesystem::path const &);                                         \
  template void               save_checkpoint(std::filesystem::path const &, Checkpoint<T> const &);              \
  template Checkpoint<T>      load_checkpoint(std::filesystem::path const &);                                      \
  template void               save_operator(std::filesystem::path const &, OperatorBinding<T> const &);           \
  template OperatorBinding<T> load_operator(std::filesystem::path const &);

MADUN_INSTANTIATE_ARCHIVE(float)
MADUN_INSTANTIATE_ARCHIVE(double)

} // namespace madun
