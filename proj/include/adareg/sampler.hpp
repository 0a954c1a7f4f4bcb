#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "adareg/rng.hpp"

namespace adareg::train {

struct PKConfig {
  std::size_t p = 8;  // identities per batch
  std::size_t k = 4;  // instances per identity
};

void validate(const PKConfig& config);

struct Batch {
  std::vector<std::size_t> indices;       // into the caller's sample list
  std::vector<std::int64_t> identities;  // aligned with indices
};

/// Identity-balanced batches: P distinct identities, K samples each. An
/// identity with fewer than K samples is drawn with replacement.
class PkSampler {
 public:
  PkSampler(std::span<const std::size_t> indices, std::span<const std::int64_t> identities, const PKConfig& config,
            std::uint64_t seed);

  Batch next();
  std::size_t num_identities() const noexcept { return pools_.size(); }

 private:
  std::vector<std::int64_t> ids_;
  std::vector<std::vector<std::size_t>> pools_;
  PKConfig config_;
  Rng rng_;
};

}  // namespace adareg::train
