#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "adareg/adaptive_reg.hpp"
#include "adareg/checkpoint.hpp"
#include "adareg/config.hpp"
#include "adareg/reid_model.hpp"
#include "adareg/sampler.hpp"
#include "adareg/synth_data.hpp"

namespace adareg::train {

/// v <- momentum * v + g; w <- w - lr * v. Thetas use lr * theta_lr_scale.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double theta_lr_scale) : momentum_(momentum), theta_scale_(theta_lr_scale) {}

  void step(ad::ParameterStore& params, std::span<const ad::Tensor> grads, double lr);
  const std::vector<ad::Tensor>& velocity() const noexcept { return velocity_; }

 private:
  double momentum_;
  double theta_scale_;
  std::vector<ad::Tensor> velocity_;
};

model::ModelConfig model_config(const RunConfig& config, std::size_t height, std::size_t width,
                                std::size_t num_classes);

/// Model, parameters, factors and optimizer of one run.
struct TrainState {
  RunConfig config;
  ad::ParameterStore params;
  std::unique_ptr<model::ReidModel> model;
  std::vector<reg::RegFactor> factors;
  SgdMomentum optimizer{0.9, 1.0};
  std::map<std::int64_t, std::size_t> class_of;  // identity -> 1-based class
  std::int64_t iteration = 0;
};

/// Builds a fresh model for the training identities of `dataset`.
TrainState init_state(const RunConfig& config, const data::Dataset& dataset);

/// Rebuilds a trained model from a checkpoint for images of the given size.
TrainState restore_state(const model::Checkpoint& checkpoint, std::size_t height, std::size_t width);

model::Checkpoint make_checkpoint(const TrainState& state);

struct StepResult {
  std::int64_t iteration;  // iteration the step ran at
  double lr;
  std::vector<double> ce;       // one per objective module
  std::vector<double> triplet;  // one per objective module
  double ce_total;
  double triplet_total;
  double penalty;
  double total;
  double weight_grad_norm;
  double theta_grad_norm;
};

/// Forward (every cross-entropy and triplet term plus the penalty), backward,
/// SGD-momentum update of weights and thetas, running-stat commit.
StepResult train_step(TrainState& state, const ad::Tensor& images, std::span<const std::int64_t> identities);

/// Samples a PK batch and augments it for the given iteration.
struct BatchSource {
  BatchSource(const RunConfig& config, const data::Dataset& dataset);
  ad::Tensor images(const Batch& batch, std::int64_t iteration) const;
  Batch next() { return sampler.next(); }

  const data::Dataset* dataset;
  RunConfig config;
  PkSampler sampler;
};

struct Diagnostics {
  std::int64_t iteration;
  double weight_sq_norm;
  double min_theta;
  double max_theta;
  double penalty;
};

Diagnostics diagnose(std::int64_t iteration, const TrainState& state, double penalty);

struct TrainLog {
  std::vector<StepResult> steps;
  std::vector<reg::RegSnapshot> snapshots;
  std::vector<Diagnostics> diagnostics;
};

using StepHook = std::function<void(const TrainState&, const StepResult&)>;

/// Runs config.train.iterations steps. Snapshots are taken before the first
/// step and after every snapshot_every-th step.
TrainLog run_training(TrainState& state, const data::Dataset& dataset, const StepHook& hook = {});

inline constexpr std::string_view kLossHeader = "iteration,lr,ce_total,triplet_total,penalty,total";
inline constexpr std::string_view kDiagnosticsHeader = "iteration,weight_sq_norm,min_theta,max_theta,penalty";

std::string loss_csv(std::span<const StepResult> steps);
std::string diagnostics_csv(std::span<const Diagnostics> rows);

/// checkpoint.bin, loss.csv, snapshots.csv, diagnostics.csv and config.txt.
void write_outputs(const std::filesystem::path& dir, const TrainState& state, const TrainLog& log);

/// Inference embeddings of the listed samples, batched.
ad::Tensor embed_samples(const TrainState& state, const data::Dataset& dataset, std::span<const std::size_t> indices,
                         std::size_t batch_size = 64);

}  // namespace adareg::train
