#include "adareg/sampler.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "adareg/error.hpp"

namespace adareg::train {

void validate(const PKConfig& c) {
  if (c.p < 2) throw ValidationError("sampler.p must be >= 2 so every anchor has a negative");
  if (c.k < 2) throw ValidationError("sampler.k must be >= 2 so every anchor has a positive");
}

PkSampler::PkSampler(std::span<const std::size_t> indices, std::span<const std::int64_t> identities,
                     const PKConfig& config, std::uint64_t seed)
    : config_(config), rng_(seed) {
  validate(config);
  if (indices.size() != identities.size()) throw ValidationError("sampler needs one identity per index");
  std::map<std::int64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < indices.size(); ++i) groups[identities[i]].push_back(indices[i]);
  for (auto& [id, pool] : groups) {
    ids_.push_back(id);
    pools_.push_back(std::move(pool));
  }
  if (ids_.size() < config.p) {
    throw ValidationError("sampler needs " + std::to_string(config.p) + " identities, the data has " +
                          std::to_string(ids_.size()));
  }
}

Batch PkSampler::next() {
  std::vector<std::size_t> order(ids_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // partial Fisher-Yates: the first p slots become a uniform draw without replacement
  for (std::size_t i = 0; i < config_.p; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng_)]);
  }
  Batch batch;
  batch.indices.reserve(config_.p * config_.k);
  for (std::size_t slot = 0; slot < config_.p; ++slot) {
    const auto& pool = pools_[order[slot]];
    if (pool.size() >= config_.k) {
      std::vector<std::size_t> local(pool);
      for (std::size_t i = 0; i < config_.k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, local.size() - 1);
        std::swap(local[i], local[pick(rng_)]);
        batch.indices.push_back(local[i]);
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (std::size_t i = 0; i < config_.k; ++i) batch.indices.push_back(pool[pick(rng_)]);
    }
    batch.identities.insert(batch.identities.end(), config_.k, ids_[order[slot]]);
  }
  return batch;
}

}  // namespace adareg::train
