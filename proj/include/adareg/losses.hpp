#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "adareg/tape.hpp"

namespace adareg::loss {

struct SmoothingConfig {
  double epsilon = 0.1;
  std::size_t num_classes = 1;
};

/// q'(i) = (1 - eps) q(i) + eps / N for a 1-based label y in [1, N].
std::vector<double> smoothed_labels(std::size_t label, const SmoothingConfig& config);

/// B x N target matrix from 1-based labels.
ad::Tensor smoothed_targets(std::span<const std::size_t> labels, const SmoothingConfig& config);

/// Mean over rows of -sum_i q(i) log softmax(z)_i, with max-shift stabilization.
ad::Var cross_entropy(ad::Var logits, const ad::Tensor& targets);

struct TripletConfig {
  double margin = 0.3;
};

double euclidean(std::span<const double> a, std::span<const double> b);

/// Batch-hard triplet loss on B x D embeddings: per anchor, the farthest
/// positive and the nearest negative under Euclidean distance, hinge
/// max(0, margin + d+ - d-), averaged over anchors. Every anchor needs at
/// least one positive and one negative.
ad::Var batch_hard_triplet(ad::Var embeddings, std::span<const std::int64_t> ids, const TripletConfig& config);

/// Unit-weight sum in fixed order: cross-entropy terms, triplet terms, penalty.
ad::Var total_loss(std::span<const ad::Var> ce_terms, std::span<const ad::Var> triplet_terms,
                   std::optional<ad::Var> penalty);

}  // namespace adareg::loss
