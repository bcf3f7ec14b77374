#pragma once

// Training, sampling and evaluation pipelines behind the CLI.
//
// Model space: x0 = 2 * dose - 1, so the prescription dose 1 maps to 1 and
// dose-free body pixels map to -1. Samples map back with (x + 1) / 2.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mddose/checkpoint.hpp"
#include "mddose/config.hpp"
#include "mddose/dataset.hpp"
#include "mddose/diffusion.hpp"
#include "mddose/mamba_net.hpp"
#include "mddose/metrics.hpp"

namespace mddose {

inline constexpr double kDoseClampMax = 1.2;
/// Model-space image of the dose range [0, kDoseClampMax].
inline constexpr ClipRange kSignalRange{-1.0, 2.0 * kDoseClampMax - 1.0};

Tensor dose_to_signal(const Tensor& dose);
Tensor signal_to_dose(const Tensor& signal);
/// Clamps to [0, kDoseClampMax] in place and returns the fraction of
/// elements that were outside that range.
double clamp_dose(Tensor& dose);

class Adam {
 public:
  Adam(ParamList params, const OptimizerConfig& cfg);

  /// Applies one update from the parameters' current gradients.
  void step(double lr);
  std::uint64_t steps() const noexcept { return t_; }
  const ParamList& params() const noexcept { return params_; }

  void export_state(Checkpoint& ckpt) const;
  /// Restores parameters and moments; names and shapes must match.
  void import_state(const Checkpoint& ckpt);

 private:
  ParamList params_;
  OptimizerConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t t_ = 0;
};

struct Batch {
  Tensor x0;    // [B, 1, H, W] in model space
  Tensor cond;  // [B, C, H, W]
};
Batch make_batch(const std::vector<Phantom>& samples, std::span<const std::size_t> indices);
/// Structure images of the given samples stacked to [B, C, H, W].
Tensor stack_structures(const std::vector<Phantom>& samples, std::span<const std::size_t> indices);

std::vector<Phantom> load_split(const std::filesystem::path& data_dir, const DatasetInfo& info, Split split,
                                std::size_t count);

struct EpochStats {
  std::size_t epoch;  // 1-based
  double mean_loss;
  double lr;
  double seconds;
};

/// Owns model, optimizer and random state for one training run.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::vector<Phantom> train_set);

  /// One pass over the shuffled training set. Each optimizer step is
  /// appended to step_log as "epoch,step,lr,loss,seconds" when given.
  EpochStats train_epoch(std::ostream* step_log = nullptr);

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ckpt);

  const RunConfig& config() const noexcept { return cfg_; }
  DoseDenoiser& model() noexcept { return model_; }
  std::size_t epochs_done() const noexcept { return epoch_; }
  std::uint64_t global_step() const noexcept { return step_; }
  /// Mean wall-clock seconds per optimizer step so far.
  double seconds_per_step() const;

 private:
  RunConfig cfg_;
  std::vector<Phantom> data_;
  DiffusionSchedule sched_;
  DoseDenoiser model_;
  Adam adam_;
  Rng rng_;
  std::size_t epoch_ = 0;
  std::uint64_t step_ = 0;
  double step_seconds_ = 0.0;
};

/// Model and schedule restored from a checkpoint, ready for sampling.
struct LoadedModel {
  RunConfig config;
  DoseDenoiser model;
  DiffusionSchedule schedule;
};
LoadedModel load_model(const std::filesystem::path& checkpoint_path);

struct TrainOptions {
  std::filesystem::path out_dir;
  bool resume = false;
  bool overwrite = false;
  /// Stop after this many epochs in this invocation (resume continues).
  std::optional<std::size_t> max_epochs;
  std::ostream* log = nullptr;
};

struct TrainSummary {
  std::vector<EpochStats> epochs;  // epochs run in this invocation
  std::size_t parameter_count = 0;
  double seconds_per_step = 0.0;
};

/// Writes config.json, loss.csv, epochs.csv and checkpoint.bin (rewritten
/// after every epoch) into out_dir.
TrainSummary run_training(const RunConfig& cfg, const TrainOptions& options);

struct SampleRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path data_dir;
  Split split = Split::kTest;
  std::size_t count = 0;  // 0 = whole split
  std::uint64_t seed = 0;
  std::size_t stride = 1;
  std::size_t batch_size = 8;
  /// Clip each step's denoised estimate to kSignalRange.
  bool clip_denoised = false;
  std::filesystem::path out_dir;
  bool overwrite = false;
  std::ostream* log = nullptr;
};

struct SampleSummary {
  std::vector<std::size_t> sample_ids;
  double fraction_outside = 0.0;
  double seconds_per_step = 0.0;
};

/// Writes samples/NNNN.bin (arrays "pred" and "reference", both [1, H, W]),
/// sampler_diagnostics.csv and sampling.json into out_dir.
SampleSummary run_sampling(const SampleRequest& request);

struct EvalRequest {
  std::filesystem::path pred_dir;
  std::filesystem::path data_dir;
  Split split = Split::kTest;
  std::size_t count = 0;  // 0 = whole split
  std::filesystem::path out_dir;
  std::ostream* log = nullptr;
};

struct EvalRow {
  std::size_t sample_id;
  MetricReport report;
};

struct EvalSummary {
  std::vector<EvalRow> rows;
  MetricReport mean;
  MetricReport std;
};

/// Writes metrics.csv and dvh_curves.csv into out_dir.
EvalSummary run_eval(const EvalRequest& request);

}  // namespace mddose
