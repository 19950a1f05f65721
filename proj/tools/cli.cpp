#include "cli.hpp"

#include "madun/analysis.hpp"
#include "madun/checkpoint.hpp"
#include "madun/error.hpp"
#include "madun/image_io.hpp"
#include "madun/metrics.hpp"
#include "run_config.hpp"

#include <CLI11.hpp>
#include <atomic>
#include <csignal>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <fstream>
#include <optional>

namespace madun::cli {

namespace {

namespace fs = std::filesystem;
using Real = float;
using nlohmann::json;

std::atomic<bool> interrupted{false};

extern "C" void on_sigint(int) { interrupted = true; }

// Installs the SIGINT handler for the lifetime of a training command.
class InterruptGuard
{
public:
  InterruptGuard()
  {
    interrupted = false;
    previous_ = std::signal(SIGINT, on_sigint);
  }
  ~InterruptGuard() { std::signal(SIGINT, previous_); }
  InterruptGuard(InterruptGuard const &) = delete;
  InterruptGuard &operator=(InterruptGuard const &) = delete;

private:
  void (*previous_)(int) = SIG_DFL;
};

// Flag values; unset optionals leave the file/default value in place.
struct Flags
{
  std::optional<std::string>   config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string>   out;

  std::optional<std::size_t> stages, channels;
  std::optional<std::string> hsm, clm, op;
  std::optional<double>      ratio;

  std::optional<double>      lr;
  std::optional<std::size_t> batch, epochs, epochs_phase2, block, crop_stride, save_every, log_every;
  bool                       no_augment = false;
  bool                       learnable_phi = false;

  std::optional<std::string> data, data_phase2, eval_data, checkpoint, operator_file, mask, resume;
  std::optional<std::size_t> stride, bins;
  std::vector<std::string>   inputs;
};

void add_common(CLI::App &sub, Flags &f)
{
  sub.add_option("--config", f.config, "INI file with [model], [train], [eval] and [paths] sections");
  sub.add_option("--seed", f.seed, "Seed for operator, initialization and batch order");
  sub.add_option("-o,--out", f.out, "Output directory");
}

void add_model(CLI::App &sub, Flags &f)
{
  sub.add_option("--stages", f.stages, "Number of unfolded stages K");
  sub.add_option("--channels", f.channels, "Feature channels C");
  sub.add_option("--hsm", f.hsm, "Short-term memory tap: none, star, circle, rb2");
  sub.add_option("--clm", f.clm, "Long-term memory: none, plus, concat, lstm");
  sub.add_option("--ratio", f.ratio, "CS sampling ratio for a generated Gaussian operator");
}

void add_train(CLI::App &sub, Flags &f)
{
  sub.add_option("--data", f.data, "Directory of training PGM images");
  sub.add_option("--data-phase2", f.data_phase2, "Directory of phase-2 images (default: --data)");
  sub.add_option("--operator", f.operator_file, "Operator file from gen-operator");
  sub.add_option("--lr", f.lr, "Adam learning rate");
  sub.add_option("--batch", f.batch, "Blocks per batch");
  sub.add_option("--epochs", f.epochs, "Phase-1 epochs");
  sub.add_option("--epochs-phase2", f.epochs_phase2, "Phase-2 epochs");
  sub.add_option("--block", f.block, "Training block side");
  sub.add_option("--crop-stride", f.crop_stride, "Stride between training crops");
  sub.add_option("--save-every", f.save_every, "Steps between checkpoints (0: only at the end)");
  sub.add_option("--log-every", f.log_every, "Steps between loss lines");
  sub.add_flag("--no-augment", f.no_augment, "Disable the eight-fold dihedral augmentation");
  sub.add_flag("--learnable-phi", f.learnable_phi, "Train the Gaussian sampling matrix jointly");
}

void add_eval(CLI::App &sub, Flags &f, bool positional)
{
  sub.add_option("--checkpoint", f.checkpoint, "Checkpoint file");
  sub.add_option("--stride", f.stride, "Block stride for whole-image reconstruction");
  if (positional) { sub.add_option("inputs", f.inputs, "PGM images or directories"); }
}

RunConfig resolve(Flags const &f, std::optional<std::string> &env_seed)
{
  RunConfig c;
  if (f.config) { apply_ini(c, *f.config); }
  env_seed = apply_seed_env(c);
  if (f.seed) { c.train.seed = *f.seed; }
  if (f.out) { c.output = *f.out; }
  if (f.stages) { c.model.stages = *f.stages; }
  if (f.channels) { c.model.channels = *f.channels; }
  if (f.hsm) { c.model.hsm = parse_hsm(*f.hsm); }
  if (f.clm) { c.model.clm = parse_clm(*f.clm); }
  if (f.op) { c.model.op = parse_operator_kind(*f.op); }
  if (f.ratio) { c.model.ratio = *f.ratio; }
  if (f.lr) { c.train.lr = *f.lr; }
  if (f.batch) { c.train.batch = *f.batch; }
  if (f.epochs) { c.train.epochs_phase1 = *f.epochs; }
  if (f.epochs_phase2) { c.train.epochs_phase2 = *f.epochs_phase2; }
  if (f.block) { c.train.block = *f.block; }
  if (f.crop_stride) { c.train.stride = *f.crop_stride; }
  if (f.save_every) { c.save_every = *f.save_every; }
  if (f.log_every) { c.log_every = *f.log_every; }
  if (f.no_augment) { c.train.augment = false; }
  if (f.learnable_phi) { c.train.learnable_phi = true; }
  if (f.data) { c.data = *f.data; }
  if (f.data_phase2) { c.data_phase2 = *f.data_phase2; }
  if (f.eval_data) { c.eval_data = *f.eval_data; }
  if (f.checkpoint) { c.checkpoint = *f.checkpoint; }
  if (f.operator_file) { c.operator_file = *f.operator_file; }
  if (f.mask) { c.mask = *f.mask; }
  if (f.stride) { c.eval_stride = *f.stride; }
  if (f.bins) { c.bins = *f.bins; }
  c.validate();
  return c;
}

json versions()
{
  return {{"madun", MADUN_VERSION},
          {"archive", archive_version},
          {"compiler", __VERSION__},
          {"cplusplus", __cplusplus},
          {"fmt", FMT_VERSION},
          {"nlohmann_json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                                        NLOHMANN_JSON_VERSION_PATCH)},
          {"cli11", CLI11_VERSION}};
}

struct Context
{
  std::string                command;
  std::vector<std::string>   args;
  RunConfig                  config;
  std::optional<std::string> env_seed;
  std::ostream              &out;
  std::ostream              &err;
};

void write_text(fs::path const &path, std::string const &text)
{
  std::ofstream file(path, std::ios::binary);
  file << text;
  if (!file) { throw DataError(fmt::format("cannot write {}", path.string())); }
}

void write_json(fs::path const &path, json const &j) { write_text(path, j.dump(2) + "\n"); }

// The resolved configuration, seed and versions behind one run.
void write_manifest(Context const &ctx, json extra = json::object())
{
  fs::create_directories(ctx.config.output);
  json m = {{"command", ctx.command},
            {"arguments", ctx.args},
            {"config", ctx.config.to_json()},
            {"seed", ctx.config.train.seed},
            {"seed_from_env", ctx.env_seed ? json(*ctx.env_seed) : json(nullptr)},
            {"versions", versions()}};
  m.update(extra);
  write_json(ctx.config.output / "manifest.json", m);
}

std::vector<std::pair<std::string, Tensor<Real>>> load_inputs(std::vector<std::string> const &inputs)
{
  std::vector<fs::path> files;
  for (auto const &in : inputs) {
    if (fs::is_directory(in)) {
      auto const listed = list_images(in);
      files.insert(files.end(), listed.begin(), listed.end());
    } else {
      files.emplace_back(in);
    }
  }
  if (files.empty()) { throw DataError("no input images given"); }
  std::vector<std::pair<std::string, Tensor<Real>>> images;
  for (auto const &f : files) {
    images.emplace_back(f.stem().string(), read_pgm<Real>(f));
  }
  return images;
}

Checkpoint<Real> require_checkpoint(RunConfig const &c)
{
  if (c.checkpoint.empty()) { throw ConfigError("--checkpoint is required"); }
  return load_checkpoint<Real>(c.checkpoint);
}

// Operator from --operator, or a fresh Gaussian operator from (ratio, block, seed).
OperatorBinding<Real> resolve_operator(RunConfig &c)
{
  if (!c.operator_file.empty()) {
    auto binding = load_operator<Real>(c.operator_file);
    c.model.op = binding.kind;
    c.model.ratio = binding.ratio();
    return binding;
  }
  if (c.model.op == OperatorKind::mri) {
    throw ConfigError("MRI runs need --operator (create one with gen-operator --mask)");
  }
  return OperatorBinding<Real>::from(
    GaussianOperator<Real>::build(c.model.ratio, c.train.block * c.train.block, c.train.seed));
}

struct Data
{
  Dataset<Real> phase1, phase2;
};

Data load_training_data(RunConfig const &c, OperatorBinding<Real> const &binding)
{
  if (c.data.empty()) { throw ConfigError("--data is required"); }
  auto const block = binding.block();
  Data       d;
  d.phase1 = make_dataset<Real>(c.data, block, binding.kind == OperatorKind::mri ? block : c.train.stride,
                                c.train.augment);
  if (c.train.epochs_phase2 > 0) {
    d.phase2 = make_dataset<Real>(c.data_phase2.empty() ? c.data : c.data_phase2, c.train.block_phase2,
                                  c.train.crop_stride_phase2, c.train.augment);
  }
  return d;
}

// Runs a trainer with periodic checkpoints and loss logging; false when interrupted.
bool train_loop(Trainer<Real> &trainer, fs::path const &ckpt_path, RunConfig const &c, std::ostream &out,
                std::string const &prefix = {})
{
  std::size_t epochs_seen = trainer.history().epochs.size();
  auto const  total = trainer.total_steps();
  trainer.run([&](Trainer<Real> const &t) {
    auto const step = t.step_index();
    if (c.log_every > 0 && (step % c.log_every == 0 || step == total)) {
      fmt::print(out, "{}step {}/{} loss {:.6f}\n", prefix, step, total, t.history().step_loss.back());
    }
    for (; epochs_seen < t.history().epochs.size(); ++epochs_seen) {
      auto const &e = t.history().epochs[epochs_seen];
      fmt::print(out, "{}phase {} epoch {} mean loss {:.6f}\n", prefix, e.phase, e.epoch + 1, e.mean_loss);
    }
    if (c.save_every > 0 && step % c.save_every == 0) { save_checkpoint(ckpt_path, t.checkpoint()); }
    return !interrupted.load();
  });
  save_checkpoint(ckpt_path, trainer.checkpoint());
  out.flush();
  return trainer.done();
}

int cmd_gen_operator(Context &ctx)
{
  auto &c = ctx.config;
  fs::create_directories(c.output);
  auto const path = c.output / "operator.madun";
  if (c.model.op == OperatorKind::mri) {
    if (c.mask.empty()) { throw ConfigError("gen-operator --operator-kind mri needs --mask"); }
    auto const pixels = read_pgm<Real>(c.mask);
    Tensor<Real> mask(pixels.shape());
    for (std::size_t i = 0; i < mask.numel(); ++i) {
      mask.data()[i] = pixels.data()[i] > 0 ? Real(1) : Real(0);
    }
    auto const binding = OperatorBinding<Real>::from(MriOperator<Real>(mask));
    binding.block(); // rejects non-square masks
    save_operator(path, binding);
    c.model.ratio = binding.ratio();
    fmt::print(ctx.out, "mri mask {}x{} ratio {:.4f} -> {}\n", mask.dim(0), mask.dim(1), binding.ratio(),
               path.string());
  } else {
    auto const n = c.train.block * c.train.block;
    auto const op = GaussianOperator<Real>::build(c.model.ratio, n, c.train.seed);
    save_operator(path, OperatorBinding<Real>::from(op));
    fmt::print(ctx.out, "gaussian phi {}x{} ratio {} seed {} orthonormality error {:.3g} -> {}\n", op.m(), op.n(),
               c.model.ratio, c.train.seed, op.orthonormality_error(), path.string());
  }
  write_manifest(ctx, {{"operator_file", path.string()}});
  return exit_ok;
}

int cmd_train(Context &ctx, std::optional<std::string> const &resume)
{
  auto &c = ctx.config;
  // A resumed run keeps the checkpoint's model, operator and schedule; only
  // the epoch counts may be extended from the command line.
  std::optional<Checkpoint<Real>> previous;
  if (resume) {
    previous = load_checkpoint<Real>(*resume);
    auto train = previous->train;
    train.epochs_phase1 = c.train.epochs_phase1;
    train.epochs_phase2 = c.train.epochs_phase2;
    c.train = train;
    c.model = previous->params.config;
  }
  auto const binding = previous ? previous->binding : resolve_operator(c);
  auto       data = load_training_data(c, binding);
  auto const blocks = data.phase1.size();
  Trainer<Real> trainer(init_params<Real>(c.model, c.train.seed), binding, std::move(data.phase1),
                        std::move(data.phase2), c.train);
  if (previous) {
    trainer.restore(*previous);
    fmt::print(ctx.out, "resumed {} at step {}\n", *resume, trainer.step_index());
  }
  fs::create_directories(c.output);
  auto const ckpt_path = c.checkpoint.empty() ? c.output / "checkpoint.madun" : c.checkpoint;
  write_manifest(ctx, {{"checkpoint", ckpt_path.string()}, {"parameters", trainer.params().count()},
                       {"total_steps", trainer.total_steps()}});
  fmt::print(ctx.out, "training K={} C={} hsm={} clm={} ratio={} on {} blocks, {} steps\n", c.model.stages,
             c.model.channels, to_string(c.model.hsm), to_string(c.model.clm), c.model.ratio,
             blocks, trainer.total_steps());

  InterruptGuard guard;
  bool const     finished = train_loop(trainer, ckpt_path, c, ctx.out);
  write_json(c.output / "history.json", to_json(trainer.history()));
  if (!finished) {
    fmt::print(ctx.err, "interrupted at step {}; checkpoint saved to {}\n", trainer.step_index(), ckpt_path.string());
    return exit_interrupted;
  }
  fmt::print(ctx.out, "checkpoint -> {}\n", ckpt_path.string());
  return exit_ok;
}

EvalReport evaluate_inputs(Context &ctx, Checkpoint<Real> const &ckpt, std::vector<std::string> const &inputs,
                           std::vector<Tensor<Real>> *outputs)
{
  auto const images = load_inputs(inputs);
  auto       report = evaluate(images, ckpt.binding, ckpt.params, ctx.config.eval_stride, outputs);
  report.config["checkpoint"] = ctx.config.checkpoint.string();
  report.config["checkpoint_step"] = ckpt.step;
  return report;
}

std::vector<std::string> eval_inputs(Flags const &f, RunConfig const &c)
{
  if (!f.inputs.empty()) { return f.inputs; }
  if (!c.data.empty()) { return {c.data.string()}; }
  throw ConfigError("no images given (pass files or directories, or --data)");
}

int cmd_reconstruct(Context &ctx, Flags const &f)
{
  auto const               ckpt = require_checkpoint(ctx.config);
  std::vector<Tensor<Real>> outputs;
  auto const               report = evaluate_inputs(ctx, ckpt, eval_inputs(f, ctx.config), &outputs);
  fs::create_directories(ctx.config.output);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    auto const &score = report.images[i];
    auto const  pgm = ctx.config.output / (score.name + "_rec.pgm");
    write_pgm(pgm, outputs[i]);
    auto sidecar = report.to_json();
    sidecar["images"] = json::array({sidecar["images"][i]});
    sidecar.erase("mean_psnr");
    sidecar.erase("mean_ssim");
    sidecar["output"] = pgm.string();
    write_json(ctx.config.output / (score.name + "_rec.json"), sidecar);
  }
  write_json(ctx.config.output / "report.json", report.to_json());
  write_manifest(ctx);
  ctx.out << report.to_table();
  return exit_ok;
}

int cmd_evaluate(Context &ctx, Flags const &f)
{
  auto const ckpt = require_checkpoint(ctx.config);
  auto const report = evaluate_inputs(ctx, ckpt, eval_inputs(f, ctx.config), nullptr);
  fs::create_directories(ctx.config.output);
  write_json(ctx.config.output / "report.json", report.to_json());
  write_text(ctx.config.output / "report.txt", report.to_table());
  write_manifest(ctx);
  ctx.out << report.to_table();
  return exit_ok;
}

struct AblationCase
{
  char const *label;
  HsmVariant  hsm;
  ClmVariant  clm;
};

// The six component cases of the ablation table, then the two alternative
// long-term memories on top of the default short-term memory.
constexpr AblationCase ablation_grid[] = {
  {"a", HsmVariant::none, ClmVariant::none},   {"b", HsmVariant::none, ClmVariant::lstm},
  {"c", HsmVariant::star, ClmVariant::none},   {"d", HsmVariant::circle, ClmVariant::none},
  {"e", HsmVariant::rb2, ClmVariant::none},    {"f", HsmVariant::rb2, ClmVariant::lstm},
  {"g", HsmVariant::rb2, ClmVariant::plus},    {"h", HsmVariant::rb2, ClmVariant::concat},
};

int cmd_ablate(Context &ctx)
{
  auto      &c = ctx.config;
  auto const binding = resolve_operator(c);
  auto const data = load_training_data(c, binding);
  auto const eval_set = load_inputs({(c.eval_data.empty() ? c.data : c.eval_data).string()});
  fs::create_directories(c.output);
  write_manifest(ctx, {{"cases", std::size(ablation_grid)}});

  InterruptGuard guard;
  json           rows = json::array();
  std::string    table = fmt::format("{:<5} {:^5} {:^5} {:^5} {:^6}  {:>7}  {:>10}  {:>9}  {:>7}\n", "case", "*HSM",
                                     "oHSM", "HSM", "CLM", "params", "final loss", "PSNR(dB)", "SSIM");
  auto const mark = [](bool on) { return on ? "x" : "-"; };
  for (auto const &cs : ablation_grid) {
    auto model = c.model;
    model.hsm = cs.hsm;
    model.clm = cs.clm;
    Trainer<Real> trainer(init_params<Real>(model, c.train.seed), binding, data.phase1, data.phase2, c.train);
    auto const    ckpt = c.output / fmt::format("ablate_{}.madun", cs.label);
    bool const    finished = train_loop(trainer, ckpt, c, ctx.out, fmt::format("[{}] ", cs.label));
    if (!finished) {
      fmt::print(ctx.err, "interrupted in case ({}); partial checkpoint saved to {}\n", cs.label, ckpt.string());
      return exit_interrupted;
    }
    auto const   report = evaluate(eval_set, trainer.binding(), trainer.params(), c.eval_stride);
    auto const  &losses = trainer.history().step_loss;
    double const final_loss = losses.empty() ? 0.0 : losses.back();
    rows.push_back({{"case", cs.label},
                    {"hsm", to_string(cs.hsm)},
                    {"clm", to_string(cs.clm)},
                    {"parameters", trainer.params().count()},
                    {"initial_loss", losses.empty() ? 0.0 : losses.front()},
                    {"final_loss", final_loss},
                    {"checkpoint", ckpt.string()},
                    {"report", report.to_json()}});
    table += fmt::format("({})   {:^5} {:^5} {:^5} {:^6}  {:>7}  {:>10.6f}  {:>9.4f}  {:>7.4f}\n", cs.label,
                         mark(cs.hsm == HsmVariant::star), mark(cs.hsm == HsmVariant::circle),
                         mark(cs.hsm == HsmVariant::rb2), cs.clm == ClmVariant::none ? "-" : to_string(cs.clm),
                         trainer.params().count(), final_loss, report.mean_psnr, report.mean_ssim);
  }
  write_json(c.output / "ablation.json", {{"rows", rows}, {"config", c.to_json()}});
  write_text(c.output / "ablation.txt", table);
  ctx.out << table;
  return exit_ok;
}

// Centre square crop; the spectral analysis needs square feature maps.
Tensor<Real> centre_square(Tensor<Real> const &image)
{
  std::size_t const H = image.dim(0), W = image.dim(1), s = std::min(H, W);
  std::size_t const top = (H - s) / 2, left = (W - s) / 2;
  Tensor<Real>      out({s, s});
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) out.data()[y * s + x] = image.data()[(top + y) * W + left + x];
  return out;
}

int cmd_analyze(Context &ctx, Flags const &f)
{
  auto const &c = ctx.config;
  auto const  ckpt = require_checkpoint(c);
  auto const  images = load_inputs(eval_inputs(f, c));
  fs::create_directories(c.output);

  std::string names;
  for (auto const &[name, img] : images) names += (names.empty() ? "" : " ") + name;
  auto const header = fmt::format("# checkpoint: {}\n# images: {}\n", c.checkpoint.string(), names);

  json written = json::array();
  if (ckpt.params.config.clm == ClmVariant::lstm) {
    std::string csv = header + "stage,input,forget,output\n";
    for (auto const &g : gate_weight_norms(ckpt.params)) {
      csv += fmt::format("{},{:.9g},{:.9g},{:.9g}\n", g.stage, g.input, g.forget, g.output);
    }
    write_text(c.output / "gate_norms.csv", csv);
    written.push_back("gate_norms.csv");
  } else {
    fmt::print(ctx.out, "no ConvLSTM memory (clm={}); skipping gate norms\n", to_string(ckpt.params.config.clm));
  }

  // curves[stage][memory] over all images
  std::size_t const K = ckpt.params.config.stages;
  std::vector<std::vector<SpectralCurve>> z_curves(K), h_curves(K);
  for (auto const &[name, img] : images) {
    auto const   square = centre_square(img);
    auto const   side = square.dim(0);
    auto const   sampler = ckpt.binding.sampler(side, side, c.eval_stride);
    Tensor<Real> x({1, 1, side, side});
    for (std::size_t i = 0; i < square.numel(); ++i) x.data()[i] = square.data()[i] / Real(255);
    auto       tape = Tape<Real>::inference();
    auto const result = model_forward(tape, sampler->measure(tape, x), *sampler, ckpt.params, true);
    for (std::size_t k = 1; k <= K; ++k) {
      auto const &state = result.trajectory[k];
      if (state.z.defined()) z_curves[k - 1].push_back(spectral_density(state.z, c.bins));
      if (state.h.defined()) h_curves[k - 1].push_back(spectral_density(state.h, c.bins));
    }
  }
  std::string csv = header + "stage,memory,frequency,power\n";
  bool        any = false;
  for (std::size_t k = 0; k < K; ++k) {
    for (auto const &[memory, curves] : {std::pair{"z", &z_curves[k]}, std::pair{"h", &h_curves[k]}}) {
      if (curves->empty()) continue;
      any = true;
      for (auto const &b : average_curves(*curves).bins) {
        csv += fmt::format("{},{},{:.6f},{:.9g}\n", k + 1, memory, b.frequency, b.power);
      }
    }
  }
  if (any) {
    write_text(c.output / "spectrum.csv", csv);
    written.push_back("spectrum.csv");
  } else {
    fmt::print(ctx.out, "model carries no memory features; skipping spectra\n");
  }
  write_manifest(ctx, {{"outputs", written}});
  for (auto const &w : written) fmt::print(ctx.out, "{} -> {}\n", w.get<std::string>(), c.output.string());
  return exit_ok;
}

} // namespace

int run(std::vector<std::string> const &args, std::ostream &out, std::ostream &err)
{
  CLI::App app{"Memory-augmented deep unfolding network for compressive sensing", "madun"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MADUN_VERSION);

  Flags f;
  auto *gen = app.add_subcommand("gen-operator", "Build and save a Gaussian sampling matrix or MRI mask binding");
  add_common(*gen, f);
  gen->add_option("--operator-kind", f.op, "gaussian or mri");
  gen->add_option("--ratio", f.ratio, "Sampling ratio (Gaussian)");
  gen->add_option("--block", f.block, "Block side; the matrix acts on block^2 pixels");
  gen->add_option("--mask", f.mask, "PGM k-space mask, nonzero pixels are sampled (MRI)");

  auto *train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(*train, f);
  add_model(*train, f);
  add_train(*train, f);
  train->add_option("--checkpoint", f.checkpoint, "Checkpoint path (default: <out>/checkpoint.madun)");
  train->add_option("--resume", f.resume, "Continue from a checkpoint written by train");

  auto *recon = app.add_subcommand("reconstruct", "Reconstruct images and write PGM outputs with metric sidecars");
  add_common(*recon, f);
  add_eval(*recon, f, true);

  auto *eval = app.add_subcommand("evaluate", "Score a checkpoint on a set of images");
  add_common(*eval, f);
  add_eval(*eval, f, true);
  eval->add_option("--data", f.data, "Directory of evaluation images");

  auto *ablate = app.add_subcommand("ablate", "Train and score the eight memory variants with a shared seed");
  add_common(*ablate, f);
  add_model(*ablate, f);
  add_train(*ablate, f);
  ablate->add_option("--eval", f.eval_data, "Directory of evaluation images (default: --data)");
  ablate->add_option("--stride", f.stride, "Block stride for evaluation");

  auto *analyze = app.add_subcommand("analyze", "Export gate norms and memory spectra from a checkpoint");
  add_common(*analyze, f);
  add_eval(*analyze, f, true);
  analyze->add_option("--data", f.data, "Directory of images to average spectra over");
  analyze->add_option("--bins", f.bins, "Radial frequency bins");

  app.add_subcommand("selftest", "Run the built-in oracle and gradient checks");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (CLI::CallForHelp const &e) {
    return app.exit(e, out, err);
  } catch (CLI::CallForAllHelp const &e) {
    return app.exit(e, out, err);
  } catch (CLI::CallForVersion const &e) {
    return app.exit(e, out, err);
  } catch (CLI::ParseError const &e) {
    fmt::print(err, "usage error: {}\nRun 'madun --help' for usage.\n", e.what());
    return exit_usage;
  }

  auto *sub = app.get_subcommands().front();
  if (sub->get_name() == "selftest") { return selftest(out) == 0 ? exit_ok : exit_failure; }

  try {
    Context ctx{sub->get_name(), args, {}, {}, out, err};
    ctx.config = resolve(f, ctx.env_seed);
    if (sub == gen) return cmd_gen_operator(ctx);
    if (sub == train) return cmd_train(ctx, f.resume);
    if (sub == recon) return cmd_reconstruct(ctx, f);
    if (sub == eval) return cmd_evaluate(ctx, f);
    if (sub == ablate) return cmd_ablate(ctx);
    if (sub == analyze) return cmd_analyze(ctx, f);
  } catch (ContractError const &e) {
    fmt::print(err, "{}: {}\n", e.kind(), e.what());
    return exit_internal;
  } catch (Error const &e) {
    fmt::print(err, "{}: {}\n", e.kind(), e.what());
    return exit_failure;
  } catch (fs::filesystem_error const &e) {
    fmt::print(err, "data error: {}\n", e.what());
    return exit_failure;
  } catch (std::exception const &e) {
    fmt::print(err, "internal error: {}\n", e.what());
    return exit_internal;
  }
  return exit_usage;
}

} // namespace madun::cli
