#pragma once

#include "madun/binding.hpp"
#include "madun/model.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace madun {

struct TrainConfig
{
  double      lr = 1e-4;
  std::size_t batch = 64;
  double      beta1 = 0.9;
  double      beta2 = 0.999;
  double      eps = 1e-8;
  std::size_t epochs_phase1 = 200;
  std::size_t epochs_phase2 = 0;
  std::size_t block = 33;           // phase-1 block side
  std::size_t stride = 33;          // phase-1 crop stride
  std::size_t block_phase2 = 99;    // phase-2 composite side
  std::size_t crop_stride_phase2 = 33;
  std::size_t stride_phase2 = 22;   // unfold stride inside a composite
  bool        augment = true;
  bool        learnable_phi = false;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(TrainConfig const &) const = default;
};

// Bias-corrected Adam without weight decay over a fixed list of tensors.
template <typename T> class Adam
{
public:
  Adam(NamedTensors<T> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Throws ContractError when a parameter has no gradient.
  void step();
  void zero_grad();

  std::size_t             steps() const { return steps_; }
  NamedTensors<T> const  &params() const { return params_; }
  std::vector<Tensor<T>> const &first_moments() const { return m_; }
  std::vector<Tensor<T>> const &second_moments() const { return v_; }
  void set_state(std::size_t steps, std::vector<Tensor<T>> m, std::vector<Tensor<T>> v);

private:
  NamedTensors<T>        params_;
  std::vector<Tensor<T>> m_, v_;
  double                 lr_, beta1_, beta2_, eps_;
  std::size_t            steps_ = 0;
};

// Training blocks with intensities scaled to [0, 1].
template <typename T> struct Dataset
{
  std::vector<Tensor<T>>   blocks; // [b,b] each
  std::vector<std::string> sources;
  std::size_t              block = 0;

  std::size_t size() const { return blocks.size(); }
};

// Crops every image (values 0..255) into blocks in raster order; with
// `augment` each block is followed by its seven other dihedral transforms.
template <typename T>
Dataset<T> make_dataset(std::vector<Tensor<T>> const &images, std::size_t block, std::size_t stride, bool augment,
                        std::vector<std::string> sources = {});
// Reads every PGM in `dir`. Empty directories and images smaller than the
// block raise DataError naming the files.
template <typename T>
Dataset<T> make_dataset(std::filesystem::path const &dir, std::size_t block, std::size_t stride, bool augment);

// (y, x) pairs for a fixed operator, x as [1,1,b,b].
template <typename T>
std::vector<std::pair<Tensor<T>, Tensor<T>>> make_pairs(Dataset<T> const &data, MeasurementOperator<T> const &op);

struct EpochRecord
{
  std::size_t phase = 1;
  std::size_t epoch = 0;
  double      mean_loss = 0;
  bool        operator==(EpochRecord const &) const = default;
};

struct TrainHistory
{
  std::vector<double>      step_loss;
  std::vector<EpochRecord> epochs;
  bool                     operator==(TrainHistory const &) const = default;
};

template <typename T> struct Checkpoint;

// Two-phase trainer. Batch order is a pure function of (seed, phase, epoch),
// so the position in the schedule is fully described by the global step.
template <typename T> class Trainer
{
public:
  Trainer(ModelParams<T> params, OperatorBinding<T> binding, Dataset<T> phase1, Dataset<T> phase2,
          TrainConfig config);

  std::size_t total_steps() const;
  std::size_t step_index() const { return step_; }
  bool        done() const { return step_ >= total_steps(); }

  // One optimizer step; returns the batch loss. Throws DivergenceError on a
  // non-finite loss.
  double step();
  // Steps until done or until `keep_going` returns false.
  void   run(std::function<bool(Trainer const &)> const &keep_going = {});

  ModelParams<T> const     &params() const { return params_; }
  OperatorBinding<T> const &binding() const { return binding_; }
  TrainHistory const       &history() const { return history_; }
  TrainConfig const        &config() const { return config_; }
  Adam<T> const            &optimizer() const { return adam_; }

  Checkpoint<T> checkpoint() const;
  // Restores parameters, operator, optimizer and schedule position. The model
  // configuration must match exactly.
  void          restore(Checkpoint<T> const &ckpt);

private:
  struct Position
  {
    std::size_t phase, epoch, batch, batches;
  };
  Position                 locate(std::size_t step) const;
  std::vector<std::size_t> order(std::size_t phase, std::size_t epoch) const;
  std::size_t              batches(std::size_t phase) const;

  ModelParams<T>                          params_;
  OperatorBinding<T>                      binding_;
  Dataset<T>                              phase1_, phase2_;
  TrainConfig                             config_;
  std::unique_ptr<MeasurementOperator<T>> sampler1_, sampler2_;
  Adam<T>                                 adam_;
  TrainHistory                            history_;
  std::size_t                             step_ = 0;
};

} // namespace madun
