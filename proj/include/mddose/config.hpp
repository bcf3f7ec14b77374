#pragma once

#include <cstdint>
#include <string>

#include "mddose/mamba_net.hpp"

namespace mddose {

struct ScheduleConfig {
  std::size_t steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
};

struct OptimizerConfig {
  double lr = 1e-2;
  double lr_min = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
};

struct RunConfig {
  UNetConfig model;
  ScheduleConfig schedule;
  OptimizerConfig optim;
  std::string data_dir;
  std::uint64_t seed = 0;
  std::size_t epochs = 60;
  std::size_t batch_size = 16;
  /// First epoch of the linear decay; 0 means epochs / 2.
  std::size_t decay_start = 0;
  std::size_t image_size = 64;

  std::size_t decay_epoch() const { return decay_start ? decay_start : epochs / 2; }
  void validate() const;
};

/// Constant lr for epochs [0, decay_epoch), then a linear per-epoch ramp that
/// reaches lr_min at the final epoch.
double learning_rate(const OptimizerConfig& optim, std::size_t epoch, std::size_t epochs, std::size_t decay_epoch);
double learning_rate(const RunConfig& cfg, std::size_t epoch);

/// Pretty-printed JSON; to_json/from_json round-trip losslessly.
std::string to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
std::string to_json(const UNetConfig& cfg);

RunConfig load_run_config(const std::string& path);

}  // namespace mddose
