#include "adareg/layers.hpp"

#include <cmath>

#include "adareg/error.hpp"

namespace adareg::nn {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::dense: return "dense";
  }
  return "?";
}

std::string_view to_string(FieldKind kind) {
  switch (kind) {
    case FieldKind::kernel: return "kernel";
    case FieldKind::bias: return "bias";
    case FieldKind::gamma: return "gamma";
    case FieldKind::beta: return "beta";
  }
  return "?";
}

void commit_stats(ad::ParameterStore& params, const StatsSink& pending) {
  for (const PendingStats& p : pending) {
    ad::Tensor& mean = params.value(p.running_mean);
    ad::Tensor& var = params.value(p.running_var);
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] = (1.0 - p.momentum) * mean[c] + p.momentum * p.moments.mean[c];
      var[c] = (1.0 - p.momentum) * var[c] + p.momentum * p.moments.var[c];
    }
  }
}

namespace {

ad::Tensor normal_init(ad::Shape shape, double stddev, Rng& rng) {
  ad::Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

Dense::Dense(ad::ParameterStore& params, const std::string& name, std::size_t in, std::size_t out, bool with_bias,
             Rng& rng)
    : in_(in), out_(out) {
  if (in == 0 || out == 0) throw ValidationError("dense layer '" + name + "' needs positive sizes");
  kernel_ = params.add(name + ".kernel", normal_init({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng),
                       ad::ParamRole::weight);
  if (with_bias) bias_ = params.add(name + ".bias", ad::Tensor({out}, 0.0), ad::ParamRole::weight);
}

ad::Var Dense::forward(ad::Tape& tape, ad::Var x) const {
  if (x.shape().size() != 2 || x.shape()[1] != in_) {
    throw ValidationError("dense layer expects B x " + std::to_string(in_) + ", got " + ad::to_string(x.shape()));
  }
  ad::Var y = ad::matmul(x, tape.param(kernel_));
  if (bias_) y = ad::add(y, tape.param(*bias_));
  return y;
}

void Dense::describe(std::vector<ParamDescriptor>& out) const {
  out.push_back({kernel_, LayerKind::dense, FieldKind::kernel});
  if (bias_) out.push_back({*bias_, LayerKind::dense, FieldKind::bias});
}

Conv2d::Conv2d(ad::ParameterStore& params, const std::string& name, std::size_t in_channels,
               std::size_t out_channels, const Options& options, Rng& rng)
    : in_(in_channels), out_(out_channels), k_(options.kernel_size), geometry_(options.geometry) {
  if (in_ == 0 || out_ == 0 || k_ == 0) throw ValidationError("conv layer '" + name + "' needs positive sizes");
  if (geometry_.stride == 0) throw ValidationError("conv layer '" + name + "' needs a positive stride");
  const double fan_in = static_cast<double>(in_ * k_ * k_);
  kernel_ = params.add(name + ".kernel", normal_init({out_, in_, k_, k_}, std::sqrt(2.0 / fan_in), rng),
                       ad::ParamRole::weight);
  if (options.with_bias) {
    bias_ = params.add(name + ".bias", ad::Tensor({out_}, options.bias_init), ad::ParamRole::weight);
  }
}

std::size_t Conv2d::output_size(std::size_t input) const { return ad::conv_output_size(input, k_, geometry_); }

ad::Var Conv2d::forward(ad::Tape& tape, ad::Var x) const {
  std::optional<ad::Var> b;
  if (bias_) b = tape.param(*bias_);
  return ad::conv2d(x, tape.param(kernel_), b, geometry_);
}

void Conv2d::describe(std::vector<ParamDescriptor>& out) const {
  out.push_back({kernel_, LayerKind::conv, FieldKind::kernel});
  if (bias_) out.push_back({*bias_, LayerKind::conv, FieldKind::bias});
}

BatchNorm::BatchNorm(ad::ParameterStore& params, const std::string& name, std::size_t channels, double momentum,
                     double epsilon)
    : channels_(channels), momentum_(momentum), epsilon_(epsilon) {
  if (channels == 0) throw ValidationError("batch norm '" + name + "' needs at least one channel");
  if (!(momentum > 0.0 && momentum < 1.0)) throw ValidationError("batch norm momentum must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ValidationError("batch norm epsilon must be positive");
  gamma_ = params.add(name + ".gamma", ad::Tensor({channels}, 1.0), ad::ParamRole::weight);
  beta_ = params.add(name + ".beta", ad::Tensor({channels}, 0.0), ad::ParamRole::weight);
  running_mean_ = params.add(name + ".running_mean", ad::Tensor({channels}, 0.0), ad::ParamRole::buffer);
  running_var_ = params.add(name + ".running_var", ad::Tensor({channels}, 1.0), ad::ParamRole::buffer);
}

ad::Var BatchNorm::forward(ad::Tape& tape, ad::Var x, Mode mode, StatsSink* sink) const {
  if (mode == Mode::infer) {
    const auto& params = tape.params();
    return ad::batch_norm_infer(x, tape.param(gamma_), tape.param(beta_), params.value(running_mean_),
                                params.value(running_var_), epsilon_);
  }
  ad::BatchMoments moments;
  ad::Var y = ad::batch_norm_train(x, tape.param(gamma_), tape.param(beta_), epsilon_, sink ? &moments : nullptr);
  if (sink) sink->push_back({running_mean_, running_var_, momentum_, std::move(moments)});
  return y;
}

void BatchNorm::describe(std::vector<ParamDescriptor>& out) const {
  out.push_back({gamma_, LayerKind::batchnorm, FieldKind::gamma});
  out.push_back({beta_, LayerKind::batchnorm, FieldKind::beta});
}

Clip::Clip(double lo, double hi) : lo_(lo), hi_(hi) {
  if (!(lo < hi)) throw ValidationError("clip interval needs lo < hi");
}

ad::Var global_avg_pool(ad::Var x) {
  if (x.shape().size() != 4) throw ValidationError("global average pooling expects NCHW, got " + ad::to_string(x.shape()));
  return ad::reduce(ad::Reduce::mean, x, {2, 3});
}

}  // namespace adareg::nn
