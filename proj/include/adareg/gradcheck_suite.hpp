#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adareg/grad_check.hpp"

namespace adareg {

struct GradCheckCase {
  std::string name;
  ad::ParameterStore params;
  std::vector<ad::ParamId> ids;
  ad::LossFn loss;
  std::size_t max_coords_per_param = 0;
};

/// One case per differentiable op and layer, the losses, the three penalty
/// forms (including theta gradients), an objective module, and the full model
/// loss on a 4-sample batch.
std::vector<GradCheckCase> gradcheck_cases(std::uint64_t seed);

struct SuiteEntry {
  std::string name;
  ad::GradCheckReport report;
  double seconds = 0.0;
};

struct SuiteReport {
  std::vector<SuiteEntry> entries;
  bool passed = true;
  double seconds = 0.0;
};

SuiteReport run_gradcheck_suite(std::uint64_t seed, double step, double tolerance);

inline constexpr std::string_view kSuiteHeader = "op,max_rel_error,checked,below_noise,failures,excluded,passed,seconds";
std::string suite_csv(const SuiteReport& report);

}  // namespace adareg
