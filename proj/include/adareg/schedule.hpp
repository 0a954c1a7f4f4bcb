#pragma once

#include <cstdint>
#include <vector>

namespace adareg::train {

struct LRSchedule {
  double base_rate = 0.01;
  std::int64_t warmup_iters = 100;
  double warmup_start_factor = 0.1;
  std::vector<std::int64_t> milestones{800, 1400};
  double decay = 0.1;
};

void validate(const LRSchedule& schedule);

/// Linear warmup from start_factor * base at iteration 0 to base at
/// warmup_iters, then base * decay^(milestones passed).
double lr_at(std::int64_t iteration, const LRSchedule& schedule);

}  // namespace adareg::train
