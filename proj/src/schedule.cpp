#include "adareg/schedule.hpp"

#include <cmath>
#include <string>

#include "adareg/error.hpp"

namespace adareg::train {

void validate(const LRSchedule& s) {
  if (!(s.base_rate >= 0.0) || !std::isfinite(s.base_rate)) throw ValidationError("lr.base must be finite and >= 0");
  if (s.warmup_iters < 0) throw ValidationError("lr.warmup_iters must be >= 0");
  if (!(s.warmup_start_factor >= 0.0 && s.warmup_start_factor <= 1.0)) {
    throw ValidationError("lr.warmup_start_factor must lie in [0, 1]");
  }
  std::int64_t prev = s.warmup_iters;
  for (auto m : s.milestones) {
    if (m <= prev) {
      throw ValidationError("lr.milestones must be strictly increasing and beyond warmup_iters (" +
                            std::to_string(s.warmup_iters) + ")");
    }
    prev = m;
  }
}

double lr_at(std::int64_t iteration, const LRSchedule& s) {
  if (iteration < 0) throw ValidationError("iteration must be >= 0");
  if (iteration < s.warmup_iters) {
    const double t = static_cast<double>(iteration) / static_cast<double>(s.warmup_iters);
    return s.base_rate * (s.warmup_start_factor + (1.0 - s.warmup_start_factor) * t);
  }
  double rate = s.base_rate;
  for (auto m : s.milestones) {
    if (iteration >= m) rate *= s.decay;
  }
  return rate;
}

}  // namespace adareg::train
