#include "adareg/reid_model.hpp"

#include "adareg/error.hpp"
#include "adareg/ops.hpp"

namespace adareg::model {

void validate(const ModelConfig& c) {
  if (c.channels.empty()) throw ValidationError("model needs at least one conv block");
  for (auto ch : c.channels) {
    if (ch == 0) throw ValidationError("model block channels must be positive");
  }
  if (c.height == 0 || c.width == 0 || c.in_channels == 0) throw ValidationError("model input size must be positive");
  if (c.num_classes == 0) throw ValidationError("model needs at least one identity class");
  if (c.stripes == 0) throw ValidationError("model needs at least one stripe");
  const std::size_t shrink = std::size_t{1} << c.channels.size();
  if (c.height % shrink != 0 || c.width % shrink != 0) {
    throw ValidationError("input " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                          " is not divisible by 2^" + std::to_string(c.channels.size()) + " pooling");
  }
  const std::size_t final_h = c.height / shrink;
  if (final_h % c.stripes != 0) {
    throw ValidationError("final feature height " + std::to_string(final_h) + " is not divisible into " +
                          std::to_string(c.stripes) + " stripes");
  }
  if (!(c.clip_lo < c.clip_hi)) throw ValidationError("clip interval needs lo < hi");
  if (c.stripe_dim == 0 && c.channels.back() < 2) throw ValidationError("cannot halve a single final channel");
}

namespace {

std::size_t stripe_dim(const ModelConfig& c) { return c.stripe_dim ? c.stripe_dim : c.channels.back() / 2; }

nn::Conv2d::Options block_conv(const ModelConfig& c) {
  nn::Conv2d::Options o;
  o.kernel_size = 3;
  o.geometry = {1, 1};
  o.bias_init = c.conv_bias_init;
  return o;
}

const ModelConfig& checked(const ModelConfig& c) {
  validate(c);
  return c;
}

std::size_t block_input(const ModelConfig& c) {
  return c.channels.size() >= 2 ? c.channels[c.channels.size() - 2] : c.in_channels;
}

}  // namespace

ConvBlock::ConvBlock(ad::ParameterStore& params, const std::string& name, std::size_t in, std::size_t out,
                     const ModelConfig& config, Rng& rng)
    : conv_(params, name + ".conv", in, out, block_conv(config), rng),
      bn_(params, name + ".bn", out, config.bn_momentum, config.bn_epsilon) {}

ad::Var ConvBlock::forward(ad::Tape& tape, ad::Var x, nn::Mode mode, nn::StatsSink* sink) const {
  ad::Var y = bn_.forward(tape, conv_.forward(tape, x), mode, sink);
  return ad::avg_pool2d(ad::relu(y), 2);
}

void ConvBlock::describe(std::vector<nn::ParamDescriptor>& out) const {
  conv_.describe(out);
  bn_.describe(out);
}

ObjectiveModule::ObjectiveModule(ad::ParameterStore& params, const std::string& name, std::size_t dim,
                                 const ModelConfig& config, Rng& rng)
    : clip_(config.clip_lo, config.clip_hi),
      bn_(params, name + ".bn", dim, config.bn_momentum, config.bn_epsilon),
      classifier_(params, name + ".classifier", dim, config.num_classes, false, rng),
      dim_(dim) {}

ObjectiveOutput ObjectiveModule::forward(ad::Tape& tape, ad::Var feature_map, nn::Mode mode,
                                         nn::StatsSink* sink) const {
  ad::Var embedding = clip_.forward(nn::global_avg_pool(feature_map));
  ad::Var normalized = bn_.forward(tape, embedding, mode, sink);
  return {embedding, classifier_.forward(tape, normalized)};
}

void ObjectiveModule::describe(std::vector<nn::ParamDescriptor>& out) const {
  bn_.describe(out);
  classifier_.describe(out);
}

std::vector<ad::Var> slice_stripes(ad::Var feature_map, std::size_t n) {
  const ad::Shape& s = feature_map.shape();
  if (s.size() != 4) throw ValidationError("stripes need an NCHW map, got " + ad::to_string(s));
  if (n == 0 || s[2] % n != 0) {
    throw ValidationError("height " + std::to_string(s[2]) + " is not divisible into " + std::to_string(n) + " stripes");
  }
  const std::size_t rows = s[2] / n;
  std::vector<ad::Var> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(ad::slice(feature_map, 2, i * rows, rows));
  return out;
}

ReidModel::ReidModel(const ModelConfig& config, ad::ParameterStore& params, Rng& rng)
    : config_(checked(config)),
      backbone_([&] {
        std::vector<ConvBlock> blocks;
        std::size_t in = config.in_channels;
        for (std::size_t i = 0; i + 1 < config.channels.size(); ++i) {
          blocks.emplace_back(params, "backbone.block" + std::to_string(i + 1), in, config.channels[i], config, rng);
          in = config.channels[i];
        }
        return blocks;
      }()),
      global_block_(params, "global.block" + std::to_string(config.channels.size()), block_input(config),
                    config.channels.back(), config, rng),
      regional_block_(params, "regional.block" + std::to_string(config.channels.size()), block_input(config),
                      config.channels.back(), config, rng) {
  nn::Conv2d::Options reduce;
  reduce.kernel_size = 1;
  reduce.bias_init = config.conv_bias_init;
  for (std::size_t s = 0; s < config.stripes; ++s) {
    reductions_.emplace_back(params, "regional.reduce" + std::to_string(s + 1) + ".conv", config.channels.back(),
                             stripe_dim(config), reduce, rng);
  }
  heads_.emplace_back(params, "head.global", config.channels.back(), config, rng);
  for (std::size_t s = 0; s < config.stripes; ++s) {
    heads_.emplace_back(params, "head.stripe" + std::to_string(s + 1), stripe_dim(config), config, rng);
  }

  for (const auto& b : backbone_) b.describe(descriptors_);
  global_block_.describe(descriptors_);
  regional_block_.describe(descriptors_);
  for (const auto& r : reductions_) r.describe(descriptors_);
  for (const auto& h : heads_) h.describe(descriptors_);
}

std::size_t ReidModel::embedding_dim() const noexcept {
  std::size_t d = 0;
  for (const auto& h : heads_) d += h.dim();
  return d;
}

ModelOutput ReidModel::forward(ad::Tape& tape, ad::Var images, nn::Mode mode, nn::StatsSink* sink) const {
  const ad::Shape& s = images.shape();
  if (s.size() != 4 || s[1] != config_.in_channels || s[2] != config_.height || s[3] != config_.width) {
    throw ValidationError("model expects N x " + std::to_string(config_.in_channels) + " x " +
                          std::to_string(config_.height) + " x " + std::to_string(config_.width) + " images, got " +
                          ad::to_string(s));
  }
  ad::Var x = images;
  for (const auto& block : backbone_) x = block.forward(tape, x, mode, sink);

  ModelOutput out;
  out.modules.push_back(heads_[0].forward(tape, global_block_.forward(tape, x, mode, sink), mode, sink));

  ad::Var regional = regional_block_.forward(tape, x, mode, sink);
  auto stripes = slice_stripes(regional, config_.stripes);
  for (std::size_t i = 0; i < stripes.size(); ++i) {
    ad::Var reduced = reductions_[i].forward(tape, stripes[i]);
    out.modules.push_back(heads_[i + 1].forward(tape, reduced, mode, sink));
  }

  std::vector<ad::Var> parts;
  for (const auto& m : out.modules) parts.push_back(m.embedding);
  out.embedding = ad::concat(parts, 1);
  return out;
}

ad::Tensor ReidModel::embed(const ad::ParameterStore& params, const ad::Tensor& images) const {
  ad::Tape tape(params);
  tape.set_no_grad(true);
  return forward(tape, tape.constant(images), nn::Mode::infer).embedding.value();
}

}  // namespace adareg::model
