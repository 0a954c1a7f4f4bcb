#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "adareg/adaptive_reg.hpp"
#include "adareg/tape.hpp"

namespace adareg::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct FactorRecord {
  std::string theta;
  std::string param;
  reg::Category category;
  friend bool operator==(const FactorRecord&, const FactorRecord&) = default;
};

/// Everything needed to rebuild a trained model: the effective config text,
/// every stored array (weights, thetas, running statistics) and the factor
/// bookkeeping.
struct Checkpoint {
  std::string config;
  std::uint64_t iteration = 0;
  ad::ParameterStore params;
  std::vector<FactorRecord> factors;
};

std::vector<FactorRecord> factor_records(const ad::ParameterStore& params, std::span<const reg::RegFactor> factors);

/// Little-endian layout:
///   "ADAREGCK" u32 version
///   u64 len, config bytes
///   u64 iteration
///   u64 count, then per array: u32 len, name, u8 role, u32 rank, u64 dims[rank], f64 data
///   u64 count, then per factor: u32 len, theta name, u32 len, param name, u8 category
std::string encode(const Checkpoint& checkpoint);
Checkpoint decode(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every array of `source` into the same-named array of `target`.
/// Names must match one to one and shapes and roles must agree.
void restore_into(ad::ParameterStore& target, const ad::ParameterStore& source);

}  // namespace adareg::model
