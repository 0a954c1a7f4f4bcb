#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "adareg/adaptive_reg.hpp"
#include "adareg/augment.hpp"
#include "adareg/eval_metrics.hpp"
#include "adareg/reid_model.hpp"
#include "adareg/sampler.hpp"
#include "adareg/schedule.hpp"
#include "adareg/synth_data.hpp"

namespace adareg {

struct LossConfig {
  double label_smoothing = 0.1;
  double triplet_margin = 0.3;
  /// Drop the cross-entropy and triplet terms, leaving only the penalty.
  bool mask_task = false;
};

struct OptimConfig {
  double momentum = 0.9;
  /// Multiplies the learning rate of theta scalars.
  double theta_lr_scale = 1.0;
};

struct TrainConfig {
  std::int64_t iterations = 2000;
  std::int64_t snapshot_every = 100;
};

struct EvalConfig {
  eval::Protocol protocol = eval::Protocol::same_cam_same_id;
  std::size_t max_rank = 20;
  std::size_t top_k = 10;
};

struct GradCheckConfig {
  double step = 1e-5;
  double tolerance = 1e-5;
};

/// Every tunable of a run. The image size, input channels and class count of
/// `model` are taken from the dataset, not from the file.
struct RunConfig {
  std::uint64_t seed = 1;
  data::GenConfig data;
  model::ModelConfig model;
  reg::RegConfig reg;
  LossConfig loss;
  train::PKConfig sampler;
  train::AugConfig aug;
  OptimConfig optim;
  train::LRSchedule lr;
  TrainConfig train;
  EvalConfig eval;
  GradCheckConfig gradcheck;
};

/// `key = value` lines with dotted keys; '#' starts a comment; blank lines are
/// ignored. Keys not set keep their defaults. Unknown or repeated keys and
/// malformed values are errors naming the line.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Applies a single key, as a config line would.
void set_key(RunConfig& config, std::string_view key, std::string_view value);

/// Every key in a fixed order; parse_config(echo(c)) reproduces c.
std::string echo(const RunConfig& config);

void validate(const RunConfig& config);

}  // namespace adareg
