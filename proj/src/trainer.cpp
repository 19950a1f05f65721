#include "madun/trainer.hpp"

#include "madun/checkpoint.hpp"
#include "madun/error.hpp"
#include "madun/image_io.hpp"
#include "madun/ops.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <map>
#include <numeric>
#include <random>
#include <utility>

namespace madun {

void TrainConfig::validate() const
{
  // lr = 0 is allowed: it freezes the parameters, which is useful for baselines.
  if (!(lr >= 0.0) || !std::isfinite(lr)) { throw ConfigError(fmt::format("learning rate {} must be >= 0", lr)); }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) { throw ConfigError(fmt::format("beta1 {} outside [0, 1)", beta1)); }
  if (!(beta2 >= 0.0 && beta2 < 1.0)) { throw ConfigError(fmt::format("beta2 {} outside [0, 1)", beta2)); }
  if (!(eps > 0.0)) { throw ConfigError(fmt::format("Adam epsilon {} must be > 0", eps)); }
  if (batch == 0) { throw ConfigError("batch size must be >= 1"); }
  if (block == 0 || stride == 0 || block_phase2 == 0 || crop_stride_phase2 == 0 || stride_phase2 == 0) {
    throw ConfigError("block sizes and strides must be >= 1");
  }
}

// ------------------------------------------------------------------ Adam

template <typename T>
Adam<T>::Adam(NamedTensors<T> params, double lr, double beta1, double beta2, double eps)
  : params_{std::move(params)}
  , lr_{lr}
  , beta1_{beta1}
  , beta2_{beta2}
  , eps_{eps}
{
  for (auto const &[name, p] : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

template <typename T> void Adam<T>::step()
{
  for (auto const &[name, p] : params_) {
    if (!p.has_grad()) { throw ContractError(fmt::format("Adam step: parameter {} has no gradient", name)); }
  }
  ++steps_;
  double const c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  double const c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto       &p = params_[k].second;
    auto const  g = std::as_const(p).grad();
    auto        w = p.data();
    auto        m = m_[k].data();
    auto        v = v_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      double const gi = static_cast<double>(g[i]);
      double const mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * gi;
      double const vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr_ * (mi / c1) / (std::sqrt(vi / c2) + eps_));
    }
  }
}

template <typename T> void Adam<T>::zero_grad()
{
  for (auto &[name, p] : params_) {
    p.zero_grad();
  }
}

template <typename T> void Adam<T>::set_state(std::size_t steps, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v)
{
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw ContractError(fmt::format("Adam state for {} tensors, optimizer has {}", m.size(), params_.size()));
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto const &shape = params_[k].second.shape();
    if (m[k].shape() != shape || v[k].shape() != shape) {
      throw ShapeError(fmt::format("Adam state for {} has shape {}, parameter is {}", params_[k].first,
                                   to_string(m[k].shape()), to_string(shape)));
    }
    m_[k].copy_from(m[k]);
    v_[k].copy_from(v[k]);
  }
  steps_ = steps;
}

// --------------------------------------------------------------- dataset

template <typename T>
Dataset<T> make_dataset(std::vector<Tensor<T>> const &images, std::size_t block, std::size_t stride, bool augment_blocks,
                        std::vector<std::string> sources)
{
  if (images.empty()) { throw DataError("no training images"); }
  if (sources.empty()) {
    for (std::size_t i = 0; i < images.size(); ++i) {
      sources.push_back(fmt::format("image{}", i));
    }
  }
  std::vector<std::string> undersized;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].rank() != 2) { throw ShapeError(fmt::format("{}: expected [H,W]", sources[i])); }
    if (images[i].dim(0) < block || images[i].dim(1) < block) {
      undersized.push_back(fmt::format("{} ({}x{})", sources[i], images[i].dim(0), images[i].dim(1)));
    }
  }
  if (!undersized.empty()) {
    throw DataError(fmt::format("images smaller than the {}x{} block: {}", block, block, fmt::join(undersized, ", ")));
  }

  Dataset<T> data;
  data.block = block;
  data.sources = std::move(sources);
  for (auto const &image : images) {
    for (auto &b : extract_blocks(image, block, stride)) {
      for (T &v : b.data()) {
        v /= T(255);
      }
      if (!augment_blocks) {
        data.blocks.push_back(std::move(b));
        continue;
      }
      for (std::size_t k = 0; k < 8; ++k) {
        data.blocks.push_back(augment(b, k));
      }
    }
  }
  return data;
}

template <typename T>
Dataset<T> make_dataset(std::filesystem::path const &dir, std::size_t block, std::size_t stride, bool augment_blocks)
{
  auto const files = list_images(dir);
  if (files.empty()) { throw DataError(fmt::format("no .pgm images in {}", dir.string())); }
  std::vector<Tensor<T>>   images;
  std::vector<std::string> names;
  for (auto const &f : files) {
    images.push_back(read_pgm<T>(f));
    names.push_back(f.string());
  }
  return make_dataset(images, block, stride, augment_blocks, std::move(names));
}

namespace {

template <typename T> Tensor<T> stack(std::vector<Tensor<T>> const &blocks, std::span<std::size_t const> indices)
{
  auto const h = blocks[indices[0]].dim(0), w = blocks[indices[0]].dim(1);
  Tensor<T>  out({indices.size(), 1, h, w});
  auto       dst = out.data().begin();
  for (auto i : indices) {
    dst = std::copy(blocks[i].data().begin(), blocks[i].data().end(), dst);
  }
  return out;
}

} // namespace

template <typename T>
std::vector<std::pair<Tensor<T>, Tensor<T>>> make_pairs(Dataset<T> const &data, MeasurementOperator<T> const &op)
{
  std::vector<std::pair<Tensor<T>, Tensor<T>>> pairs;
  auto                                         tape = Tape<T>::inference();
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::size_t const idx[] = {i};
    auto              x = stack(data.blocks, idx);
    pairs.emplace_back(op.measure(tape, x), x);
  }
  return pairs;
}

// --------------------------------------------------------------- trainer

template <typename T>
Trainer<T>::Trainer(ModelParams<T> params, OperatorBinding<T> binding, Dataset<T> phase1, Dataset<T> phase2,
                    TrainConfig config)
  : params_{std::move(params)}
  , binding_{std::move(binding)}
  , phase1_{std::move(phase1)}
  , phase2_{std::move(phase2)}
  , config_{config}
  , adam_{{}, config.lr}
{
  config_.validate();
  params_.config.validate();
  if (params_.config.op != binding_.kind) {
    throw ConfigError(fmt::format("model expects a {} operator, binding is {}", to_string(params_.config.op),
                                  to_string(binding_.kind)));
  }
  if (config_.epochs_phase1 > 0 && phase1_.size() == 0) { throw DataError("phase 1 has no training blocks"); }
  if (config_.epochs_phase2 > 0 && phase2_.size() == 0) { throw DataError("phase 2 has no training blocks"); }
  if (binding_.kind == OperatorKind::mri && config_.epochs_phase2 > 0) {
    throw ConfigError("MRI training runs a single phase on whole images");
  }
  if (config_.learnable_phi && binding_.kind != OperatorKind::gaussian) {
    throw ConfigError("a learnable sampling matrix needs the Gaussian operator");
  }

  if (phase1_.size() > 0) { sampler1_ = binding_.sampler(phase1_.block, phase1_.block, phase1_.block); }
  if (phase2_.size() > 0 && config_.epochs_phase2 > 0) {
    sampler2_ = binding_.sampler(phase2_.block, phase2_.block, config_.stride_phase2);
  }

  auto named = params_.named();
  if (binding_.gaussian) {
    binding_.gaussian->set_learnable(config_.learnable_phi);
    if (config_.learnable_phi) { named.emplace_back("operator.phi", binding_.gaussian->phi()); }
  }
  adam_ = Adam<T>(std::move(named), config_.lr, config_.beta1, config_.beta2, config_.eps);
}

template <typename T> std::size_t Trainer<T>::batches(std::size_t phase) const
{
  auto const n = phase == 1 ? phase1_.size() : phase2_.size();
  return (n + config_.batch - 1) / config_.batch;
}

template <typename T> std::size_t Trainer<T>::total_steps() const
{
  return config_.epochs_phase1 * batches(1) + config_.epochs_phase2 * batches(2);
}

template <typename T> typename Trainer<T>::Position Trainer<T>::locate(std::size_t step) const
{
  std::size_t const first = config_.epochs_phase1 * batches(1);
  if (step < first) { return {1, step / batches(1), step % batches(1), batches(1)}; }
  step -= first;
  return {2, step / batches(2), step % batches(2), batches(2)};
}

template <typename T> std::vector<std::size_t> Trainer<T>::order(std::size_t phase, std::size_t epoch) const
{
  std::vector<std::size_t> idx(phase == 1 ? phase1_.size() : phase2_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::seed_seq   seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                      static_cast<std::uint32_t>(phase), static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

template <typename T> double Trainer<T>::step()
{
  if (done()) { throw ContractError("training schedule already complete"); }
  auto const  pos = locate(step_);
  auto const &data = pos.phase == 1 ? phase1_ : phase2_;
  auto const &sampler = pos.phase == 1 ? *sampler1_ : *sampler2_;
  auto const  idx = order(pos.phase, pos.epoch);
  auto const  begin = pos.batch * config_.batch;
  auto const  end = std::min(idx.size(), begin + config_.batch);
  auto const  x = stack(data.blocks, std::span<std::size_t const>(idx).subspan(begin, end - begin));

  Tape<T>    tape;
  auto const y = sampler.measure(tape, x);
  auto const out = model_forward(tape, y, sampler, params_).output;
  auto const loss = l1_mean(tape, out, x);
  double const value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) {
    throw DivergenceError(fmt::format("loss became {} at step {} (phase {}, epoch {}, batch {})", value, step_ + 1,
                                      pos.phase, pos.epoch + 1, pos.batch + 1));
  }
  tape.backward(loss);
  adam_.step();
  adam_.zero_grad();

  history_.step_loss.push_back(value);
  ++step_;
  if (pos.batch + 1 == pos.batches) {
    auto const   tail = history_.step_loss.end() - static_cast<std::ptrdiff_t>(pos.batches);
    double const mean = std::accumulate(tail, history_.step_loss.end(), 0.0) / static_cast<double>(pos.batches);
    history_.epochs.push_back({pos.phase, pos.epoch, mean});
  }
  return value;
}

template <typename T> void Trainer<T>::run(std::function<bool(Trainer const &)> const &keep_going)
{
  while (!done()) {
    step();
    if (keep_going && !keep_going(*this)) { return; }
  }
}

template <typename T> Checkpoint<T> Trainer<T>::checkpoint() const
{
  Checkpoint<T> ckpt;
  // Deep copies so that later steps do not alter the snapshot.
  ckpt.params = init_params<T>(params_.config, 0);
  auto dst = ckpt.params.named();
  auto src = params_.named();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i].second.copy_from(src[i].second);
  }
  ckpt.binding = binding_;
  if (binding_.gaussian) {
    auto phi = binding_.gaussian->phi().clone();
    phi.set_requires_grad(false);
    auto op = GaussianOperator<T>::from_matrix(phi, binding_.gaussian->ratio(), binding_.gaussian->seed());
    ckpt.binding.gaussian = op;
  }
  ckpt.train = config_;
  ckpt.history = history_;
  ckpt.step = step_;
  ckpt.adam_step = adam_.steps();
  for (std::size_t k = 0; k < adam_.params().size(); ++k) {
    ckpt.adam_m.emplace_back(adam_.params()[k].first, adam_.first_moments()[k].clone());
    ckpt.adam_v.emplace_back(adam_.params()[k].first, adam_.second_moments()[k].clone());
  }
  return ckpt;
}

template <typename T> void Trainer<T>::restore(Checkpoint<T> const &ckpt)
{
  require_same_config(ckpt.params.config, params_.config);
  auto dst = params_.named();
  auto src = ckpt.params.named();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i].second.copy_from(src[i].second);
  }
  if (binding_.gaussian) {
    if (!ckpt.binding.gaussian) { throw ConfigError("checkpoint holds no Gaussian sampling matrix"); }
    binding_.gaussian->phi().copy_from(ckpt.binding.gaussian->phi());
  }
  if (binding_.mri) {
    if (!ckpt.binding.mri) { throw ConfigError("checkpoint holds no MRI mask"); }
    if (ckpt.binding.mri->mask().shape() != binding_.mri->mask().shape()) {
      throw ConfigError("checkpoint MRI mask differs in size");
    }
  }

  std::map<std::string, Tensor<T>> m, v;
  for (auto const &[name, t] : ckpt.adam_m) m.emplace(name, t);
  for (auto const &[name, t] : ckpt.adam_v) v.emplace(name, t);
  std::vector<Tensor<T>> ms, vs;
  for (auto const &[name, p] : adam_.params()) {
    auto mi = m.find(name), vi = v.find(name);
    if (mi == m.end() || vi == v.end()) {
      throw ConfigError(fmt::format("checkpoint has no optimizer state for {}", name));
    }
    ms.push_back(mi->second);
    vs.push_back(vi->second);
  }
  adam_.set_state(ckpt.adam_step, std::move(ms), std::move(vs));
  history_ = ckpt.history;
  step_ = ckpt.step;
}

#define MADUN_INSTANTIATE_TRAINER(T)                                                                               \
  template class Adam<T>;                                                                                          \
  template class Trainer<T>;                                                                                       \
  template Dataset<T> make_dataset(std::vector<Tensor<T>> const &, std::size_t, std::size_t, bool,                 \
                                   std::vector<std::string>);                                                      \
  template Dataset<T> make_dataset(std::filesystem::path const &, std::size_t, std::size_t, bool);                 \
  template std::vector<std::pair<Tensor<T>, Tensor<T>>> make_pairs(Dataset<T> const &, MeasurementOperator<T> const &);

MADUN_INSTANTIATE_TRAINER(float)
MADUN_INSTANTIATE_TRAINER(double)

} // namespace madun
