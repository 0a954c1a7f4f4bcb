#pragma once

#include <cstddef>
#include <vector>

#include "adareg/layers.hpp"
#include "adareg/rng.hpp"
#include "adareg/tape.hpp"

namespace adareg::model {

struct ModelConfig {
  std::size_t height = 32;
  std::size_t width = 16;
  std::size_t in_channels = 1;
  /// One conv block per entry; the last block is replicated for the regional branch.
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t stripes = 2;
  /// Output width of each stripe's 1x1 reduction conv; 0 means channels.back() / 2.
  std::size_t stripe_dim = 0;
  std::size_t num_classes = 1;
  double clip_lo = 0.0;
  double clip_hi = 6.0;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
  double conv_bias_init = 0.0;
};

/// conv 3x3 (pad 1) -> batch norm -> relu -> 2x2 average pool.
class ConvBlock {
 public:
  ConvBlock(ad::ParameterStore& params, const std::string& name, std::size_t in, std::size_t out,
            const ModelConfig& config, Rng& rng);
  ad::Var forward(ad::Tape& tape, ad::Var x, nn::Mode mode, nn::StatsSink* sink) const;
  void describe(std::vector<nn::ParamDescriptor>& out) const;
  const nn::Conv2d& conv() const noexcept { return conv_; }

 private:
  nn::Conv2d conv_;
  nn::BatchNorm bn_;
};

struct ObjectiveOutput {
  ad::Var embedding;  // after clipping, before batch norm
  ad::Var logits;
};

/// global average pool -> clip -> batch norm -> bias-free classifier.
class ObjectiveModule {
 public:
  ObjectiveModule(ad::ParameterStore& params, const std::string& name, std::size_t dim, const ModelConfig& config,
                  Rng& rng);
  ObjectiveOutput forward(ad::Tape& tape, ad::Var feature_map, nn::Mode mode, nn::StatsSink* sink) const;
  void describe(std::vector<nn::ParamDescriptor>& out) const;
  std::size_t dim() const noexcept { return dim_; }

 private:
  nn::Clip clip_;
  nn::BatchNorm bn_;
  nn::Dense classifier_;
  std::size_t dim_;
};

/// Contiguous horizontal stripes of an NCHW map, top first. H must be divisible by n.
std::vector<ad::Var> slice_stripes(ad::Var feature_map, std::size_t n);

struct ModelOutput {
  std::vector<ObjectiveOutput> modules;  // global, stripe 1, ..., stripe n
  ad::Var embedding;                     // [global | stripe 1 | ... ] pre-BN embeddings
};

/// Shared backbone, a global branch and a regional branch with its own copy
/// of the final block, one objective module per branch output.
class ReidModel {
 public:
  ReidModel(const ModelConfig& config, ad::ParameterStore& params, Rng& rng);

  ModelOutput forward(ad::Tape& tape, ad::Var images, nn::Mode mode, nn::StatsSink* sink = nullptr) const;

  /// Inference embeddings for a batch of images, without gradient bookkeeping.
  ad::Tensor embed(const ad::ParameterStore& params, const ad::Tensor& images) const;

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<nn::ParamDescriptor>& descriptors() const noexcept { return descriptors_; }
  std::size_t embedding_dim() const noexcept;
  std::size_t num_modules() const noexcept { return heads_.size(); }

  const std::vector<ConvBlock>& backbone() const noexcept { return backbone_; }
  const ConvBlock& global_block() const noexcept { return global_block_; }
  const ConvBlock& regional_block() const noexcept { return regional_block_; }
  const std::vector<nn::Conv2d>& reductions() const noexcept { return reductions_; }

 private:
  ModelConfig config_;
  std::vector<ConvBlock> backbone_;
  ConvBlock global_block_;
  ConvBlock regional_block_;
  std::vector<nn::Conv2d> reductions_;
  std::vector<ObjectiveModule> heads_;
  std::vector<nn::ParamDescriptor> descriptors_;
};

void validate(const ModelConfig& config);

}  // namespace adareg::model
