#include "adareg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "adareg/error.hpp"

namespace adareg::ad {

namespace {

struct Probe {
  double value;
  std::uint64_t signature;
};

Probe evaluate(const LossFn& loss, const ParameterStore& params) {
  Tape tape(params);
  tape.track_branches(true);
  Var out = loss(tape);
  return {out.value().item(), tape.branch_signature()};
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss, ParameterStore& params, std::span<const ParamId> ids,
                           const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ValidationError("grad_check step must be positive");

  std::vector<Tensor> analytic;
  std::uint64_t base_signature = 0;
  {
    Tape tape(params);
    tape.track_branches(true);
    Var out = loss(tape);
    if (!std::isfinite(out.value().item())) throw NumericError("grad_check: loss is not finite at the base point");
    base_signature = tape.branch_signature();
    analytic = backward(tape, out);
  }

  GradCheckReport report;
  const double h = options.step;
  const double eps = std::numeric_limits<double>::epsilon();

  for (ParamId id : ids) {
    Tensor& value = params.value(id);
    const std::size_t n = value.size();
    std::size_t stride = 1;
    if (options.max_coords_per_param > 0 && n > options.max_coords_per_param) {
      stride = (n + options.max_coords_per_param - 1) / options.max_coords_per_param;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = value[i];
      value[i] = saved + h;
      const Probe plus = evaluate(loss, params);
      value[i] = saved - h;
      const Probe minus = evaluate(loss, params);
      value[i] = saved;

      if (!std::isfinite(plus.value) || !std::isfinite(minus.value)) {
        report.passed = false;
        report.non_finite = Coordinate{id, i};
        return report;
      }
      if (plus.signature != base_signature || minus.signature != base_signature) {
        report.excluded.push_back({id, i});
        continue;
      }

      ++report.checked;
      const double a = analytic[id][i];
      const double numeric = (plus.value - minus.value) / (2.0 * h);
      const double diff = std::abs(a - numeric);
      const double floor = options.noise_ulps * eps * (std::abs(plus.value) + std::abs(minus.value)) / (2.0 * h);
      const double rel = diff / std::max(1e-12, std::abs(a) + std::abs(numeric));
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = {id, i};
      }
      if (diff <= floor) {
        ++report.below_noise;
      } else if (rel > options.tolerance) {
        ++report.failures;
      }
    }
  }
  report.passed = report.failures == 0;
  return report;
}

}  // namespace adareg::ad
