#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adareg/ops.hpp"
#include "adareg/rng.hpp"
#include "adareg/tape.hpp"

namespace adareg::nn {

enum class Mode { train, infer };

enum class LayerKind { conv, batchnorm, dense };
enum class FieldKind { kernel, bias, gamma, beta };

std::string_view to_string(LayerKind kind);
std::string_view to_string(FieldKind kind);

/// What kind of array a registered parameter is; drives the regularization
/// factor taxonomy.
struct ParamDescriptor {
  ad::ParamId id;
  LayerKind layer;
  FieldKind field;
};

/// Batch statistics produced by a train-mode forward, applied to the running
/// averages only once the step commits.
struct PendingStats {
  ad::ParamId running_mean;
  ad::ParamId running_var;
  double momentum;
  ad::BatchMoments moments;
};
using StatsSink = std::vector<PendingStats>;

/// running <- (1 - momentum) * running + momentum * batch, for mean and biased variance.
void commit_stats(ad::ParameterStore& params, const StatsSink& pending);

class Dense {
 public:
  Dense(ad::ParameterStore& params, const std::string& name, std::size_t in, std::size_t out, bool with_bias, Rng& rng);

  ad::Var forward(ad::Tape& tape, ad::Var x) const;
  void describe(std::vector<ParamDescriptor>& out) const;

  ad::ParamId kernel() const noexcept { return kernel_; }
  std::optional<ad::ParamId> bias() const noexcept { return bias_; }
  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }

 private:
  ad::ParamId kernel_;
  std::optional<ad::ParamId> bias_;
  std::size_t in_, out_;
};

class Conv2d {
 public:
  struct Options {
    std::size_t kernel_size = 3;
    ad::ConvGeometry geometry{};
    bool with_bias = true;
    double bias_init = 0.0;
  };

  Conv2d(ad::ParameterStore& params, const std::string& name, std::size_t in_channels, std::size_t out_channels,
         const Options& options, Rng& rng);

  ad::Var forward(ad::Tape& tape, ad::Var x) const;
  void describe(std::vector<ParamDescriptor>& out) const;

  ad::ParamId kernel() const noexcept { return kernel_; }
  std::optional<ad::ParamId> bias() const noexcept { return bias_; }
  std::size_t in_channels() const noexcept { return in_; }
  std::size_t out_channels() const noexcept { return out_; }
  std::size_t output_size(std::size_t input) const;

 private:
  ad::ParamId kernel_;
  std::optional<ad::ParamId> bias_;
  std::size_t in_, out_, k_;
  ad::ConvGeometry geometry_;
};

class BatchNorm {
 public:
  BatchNorm(ad::ParameterStore& params, const std::string& name, std::size_t channels, double momentum = 0.1,
            double epsilon = 1e-5);

  /// Train mode needs at least two values per channel. `sink` may be null,
  /// in which case running statistics are left alone.
  ad::Var forward(ad::Tape& tape, ad::Var x, Mode mode, StatsSink* sink) const;
  void describe(std::vector<ParamDescriptor>& out) const;

  ad::ParamId gamma() const noexcept { return gamma_; }
  ad::ParamId beta() const noexcept { return beta_; }
  ad::ParamId running_mean() const noexcept { return running_mean_; }
  ad::ParamId running_var() const noexcept { return running_var_; }
  std::size_t channels() const noexcept { return channels_; }

 private:
  ad::ParamId gamma_, beta_, running_mean_, running_var_;
  std::size_t channels_;
  double momentum_, epsilon_;
};

/// Element-wise clipping to the closed interval [lo, hi].
class Clip {
 public:
  Clip(double lo = 0.0, double hi = 6.0);
  ad::Var forward(ad::Var x) const { return ad::clamp(x, lo_, hi_); }
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }

 private:
  double lo_, hi_;
};

/// N x C x H x W -> N x C spatial mean.
ad::Var global_avg_pool(ad::Var x);

}  // namespace adareg::nn
