#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "adareg/tape.hpp"

namespace adareg::ad {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  /// 0 checks every coordinate; otherwise an evenly strided subset per array.
  std::size_t max_coords_per_param = 0;
  /// Coordinates whose absolute discrepancy is below
  /// noise_ulps * eps * (|f(x+h)| + |f(x-h)|) / (2h) are within the rounding
  /// noise of the central difference and count as agreeing.
  double noise_ulps = 64.0;
};

struct Coordinate {
  ParamId param = 0;
  std::size_t index = 0;
};

struct GradCheckReport {
  /// Over every checked coordinate, including those inside the noise floor.
  double max_rel_error = 0.0;
  bool passed = true;
  std::size_t checked = 0;
  std::size_t below_noise = 0;
  /// Coordinates above the noise floor whose relative error exceeds the tolerance.
  std::size_t failures = 0;
  Coordinate worst;
  /// Probes whose x+h or x-h evaluation took a different piecewise branch
  /// (relu sign, clamp region, argmax) than x itself.
  std::vector<Coordinate> excluded;
  std::optional<Coordinate> non_finite;
};

/// Builds the loss on a fresh tape each call; must be deterministic.
using LossFn = std::function<Var(Tape&)>;

/// Central-difference check of backward() for the listed parameters.
/// Relative error is |a - n| / max(1e-12, |a| + |n|). A coordinate fails when
/// its discrepancy is above the noise floor and its relative error above the
/// tolerance.
GradCheckReport grad_check(const LossFn& loss, ParameterStore& params, std::span<const ParamId> ids,
                           const GradCheckOptions& options = {});

}  // namespace adareg::ad
