#include "adareg/adaptive_reg.hpp"

#include <algorithm>
#include <sstream>

#include "adareg/csv.hpp"
#include "adareg/error.hpp"
#include "adareg/ops.hpp"

namespace adareg::reg {

std::string_view to_string(Category category) {
  switch (category) {
    case Category::conv_kernel: return "conv_kernel";
    case Category::conv_bias: return "conv_bias";
    case Category::bn_gamma: return "bn_gamma";
    case Category::bn_beta: return "bn_beta";
    case Category::dense_kernel: return "dense_kernel";
  }
  return "?";
}

Category parse_category(std::string_view text) {
  for (Category c : kCategories) {
    if (to_string(c) == text) return c;
  }
  throw ValidationError("unknown factor category '" + std::string(text) + "'");
}

Category classify_category(nn::LayerKind layer, nn::FieldKind field) {
  using nn::FieldKind;
  using nn::LayerKind;
  if (layer == LayerKind::conv && field == FieldKind::kernel) return Category::conv_kernel;
  if (layer == LayerKind::conv && field == FieldKind::bias) return Category::conv_bias;
  if (layer == LayerKind::batchnorm && field == FieldKind::gamma) return Category::bn_gamma;
  if (layer == LayerKind::batchnorm && field == FieldKind::beta) return Category::bn_beta;
  if (layer == LayerKind::dense && field == FieldKind::kernel) return Category::dense_kernel;
  throw ValidationError("no regularization category for (" + std::string(nn::to_string(layer)) + ", " +
                        std::string(nn::to_string(field)) + ")");
}

namespace {

void check_half_width(double c) {
  if (!(c > 0.0)) throw ValidationError("hard sigmoid half-width must be positive, got " + std::to_string(c));
}

}  // namespace

double hard_sigmoid(double x, double half_width) {
  check_half_width(half_width);
  if (x < -half_width) return 0.0;
  if (x > half_width) return 1.0;
  return x / (2.0 * half_width) + 0.5;
}

double hard_sigmoid_derivative(double x, double half_width) {
  check_half_width(half_width);
  if (x < -half_width || x > half_width) return 0.0;
  return 1.0 / (2.0 * half_width);
}

ad::Var hard_sigmoid(ad::Var x, double half_width) {
  check_half_width(half_width);
  ad::Tape& tape = x.tape();
  ad::Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.value()[i];
    if (tape.tracking_branches()) tape.note_branch(v < -half_width ? 0 : (v > half_width ? 2 : 1));
    out[i] = hard_sigmoid(v, half_width);
  }
  return tape.record(std::move(out), {x}, [half_width](const ad::BackwardContext& ctx) {
    const ad::Tensor& xv = *ctx.inputs[0];
    ad::Tensor& gx = *ctx.input_grads[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ctx.grad[i] * hard_sigmoid_derivative(xv[i], half_width);
  });
}

std::string_view to_string(RegMode mode) {
  switch (mode) {
    case RegMode::adaptive: return "adaptive";
    case RegMode::constant: return "constant";
    case RegMode::unconstrained: return "unconstrained";
    case RegMode::off: return "off";
  }
  return "?";
}

RegMode parse_reg_mode(std::string_view text) {
  for (RegMode m : {RegMode::adaptive, RegMode::constant, RegMode::unconstrained, RegMode::off}) {
    if (to_string(m) == text) return m;
  }
  throw ValidationError("unknown regularizer mode '" + std::string(text) +
                        "' (expected adaptive|constant|unconstrained|off)");
}

std::vector<RegFactor> attach_factors(ad::ParameterStore& params, std::span<const nn::ParamDescriptor> descriptors,
                                      const RegConfig& config) {
  if (!(config.amplitude > 0.0)) throw ValidationError("regularization amplitude must be positive");
  check_half_width(config.half_width);
  std::vector<RegFactor> factors;
  factors.reserve(descriptors.size());
  for (const nn::ParamDescriptor& d : descriptors) {
    if (params.role(d.id) != ad::ParamRole::weight) {
      throw ValidationError("'" + params.name(d.id) + "' is not a network weight");
    }
    const Category category = classify_category(d.layer, d.field);
    const ad::ParamId theta =
        params.add(params.name(d.id) + ".theta", ad::Tensor::scalar(config.theta_init), ad::ParamRole::theta);
    factors.push_back({theta, d.id, config.amplitude, config.half_width, category});
  }
  return factors;
}

double lambda_of(const RegFactor& factor, const ad::ParameterStore& params) {
  return factor.amplitude * hard_sigmoid(params.value(factor.theta).item(), factor.half_width);
}

ad::Var lambda_of(ad::Tape& tape, const RegFactor& factor) {
  return ad::scale(hard_sigmoid(tape.param(factor.theta), factor.half_width), factor.amplitude);
}

namespace {

void check_coverage(const ad::ParameterStore& params, std::span<const RegFactor> factors) {
  std::vector<int> seen(params.size(), 0);
  for (const RegFactor& f : factors) {
    if (f.param >= params.size() || params.role(f.param) != ad::ParamRole::weight) {
      throw ValidationError("regularization factor references unknown parameter id " + std::to_string(f.param));
    }
    if (f.theta >= params.size() || params.role(f.theta) != ad::ParamRole::theta) {
      throw ValidationError("regularization factor for '" + params.name(f.param) + "' has no theta scalar");
    }
    if (++seen[f.param] > 1) throw ValidationError("parameter '" + params.name(f.param) + "' has two factors");
  }
  for (ad::ParamId id : params.ids(ad::ParamRole::weight)) {
    if (seen[id] == 0) throw ValidationError("parameter '" + params.name(id) + "' has no regularization factor");
  }
}

ad::Var accumulate(ad::Tape& tape, const std::vector<ad::Var>& terms) {
  if (terms.empty()) return tape.constant(ad::Tensor::scalar(0.0));
  ad::Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return total;
}

}  // namespace

ad::Var adaptive_penalty(ad::Tape& tape, std::span<const RegFactor> factors) {
  check_coverage(tape.params(), factors);
  std::vector<ad::Var> terms;
  terms.reserve(factors.size());
  for (const RegFactor& f : factors) {
    terms.push_back(ad::mul(lambda_of(tape, f), ad::sum_squares(tape.param(f.param))));
  }
  return accumulate(tape, terms);
}

ad::Var constant_penalty(ad::Tape& tape, std::span<const ad::ParamId> params, double lambda) {
  if (!(lambda >= 0.0)) throw ValidationError("constant regularization factor must be non-negative");
  std::vector<ad::Var> terms;
  terms.reserve(params.size());
  for (ad::ParamId id : params) terms.push_back(ad::scale(ad::sum_squares(tape.param(id)), lambda));
  return accumulate(tape, terms);
}

ad::Var unconstrained_penalty(ad::Tape& tape, std::span<const RegFactor> factors, bool ablation_enabled) {
  if (!ablation_enabled) throw ValidationError("unconstrained penalty is an ablation and must be enabled explicitly");
  check_coverage(tape.params(), factors);
  std::vector<ad::Var> terms;
  terms.reserve(factors.size());
  for (const RegFactor& f : factors) {
    terms.push_back(ad::mul(tape.param(f.theta), ad::sum_squares(tape.param(f.param))));
  }
  return accumulate(tape, terms);
}

ad::Var penalty(ad::Tape& tape, std::span<const RegFactor> factors, const RegConfig& config) {
  switch (config.mode) {
    case RegMode::adaptive: return adaptive_penalty(tape, factors);
    case RegMode::unconstrained: return unconstrained_penalty(tape, factors, true);
    case RegMode::constant: {
      std::vector<ad::ParamId> ids;
      ids.reserve(factors.size());
      for (const RegFactor& f : factors) ids.push_back(f.param);
      return constant_penalty(tape, ids, config.constant_lambda);
    }
    case RegMode::off: break;
  }
  return tape.constant(ad::Tensor::scalar(0.0));
}

double effective_lambda(const RegFactor& factor, const ad::ParameterStore& params, const RegConfig& config) {
  switch (config.mode) {
    case RegMode::adaptive: return lambda_of(factor, params);
    case RegMode::unconstrained: return params.value(factor.theta).item();
    case RegMode::constant: return config.constant_lambda;
    case RegMode::off: return 0.0;
  }
  return 0.0;
}

RegSnapshot take_snapshot(std::int64_t iteration, const ad::ParameterStore& params, std::span<const RegFactor> factors,
                          const RegConfig& config) {
  RegSnapshot snap;
  snap.iteration = iteration;
  snap.factors.reserve(factors.size());
  for (const RegFactor& f : factors) {
    snap.factors.push_back(
        {params.name(f.param), f.category, params.value(f.theta).item(), effective_lambda(f, params, config)});
  }
  return snap;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

std::vector<TrajectoryRow> median_trajectory(std::span<const RegSnapshot> snapshots) {
  if (snapshots.empty()) throw ValidationError("median trajectory needs at least one snapshot");
  std::vector<TrajectoryRow> rows;
  for (const RegSnapshot& snap : snapshots) {
    for (Category c : kCategories) {
      std::vector<double> values;
      for (const FactorValue& f : snap.factors) {
        if (f.category == c) values.push_back(f.lambda);
      }
      rows.push_back({snap.iteration, c, values.empty() ? std::nullopt : std::optional<double>(median(values))});
    }
  }
  return rows;
}

std::size_t Histogram::overflow() const {
  std::size_t total = 0;
  for (std::size_t i = 0; i < below.size(); ++i) total += below[i] + above[i];
  return total;
}

Histogram factor_histogram(const RegSnapshot& snapshot, const HistogramRange& range) {
  if (!(range.lo < range.hi)) throw ValidationError("histogram range needs lo < hi");
  if (range.buckets == 0) throw ValidationError("histogram needs at least one bucket");
  Histogram h;
  h.edges.resize(range.buckets + 1);
  for (std::size_t i = 0; i <= range.buckets; ++i) {
    h.edges[i] = range.lo + (range.hi - range.lo) * static_cast<double>(i) / static_cast<double>(range.buckets);
  }
  h.edges.back() = range.hi;
  for (auto& row : h.counts) row.assign(range.buckets, 0);

  for (const FactorValue& f : snapshot.factors) {
    const auto c = static_cast<std::size_t>(f.category);
    if (f.lambda < range.lo) {
      ++h.below[c];
    } else if (f.lambda > range.hi) {
      ++h.above[c];
    } else {
      // first edge strictly greater than lambda closes the bucket
      auto it = std::upper_bound(h.edges.begin(), h.edges.end(), f.lambda);
      std::size_t bucket = static_cast<std::size_t>(it - h.edges.begin());
      bucket = bucket == 0 ? 0 : bucket - 1;
      bucket = std::min(bucket, range.buckets - 1);
      ++h.counts[c][bucket];
    }
  }
  return h;
}

std::string snapshot_rows(const RegSnapshot& snapshot) {
  std::string out;
  for (const FactorValue& f : snapshot.factors) {
    out += std::to_string(snapshot.iteration) + "," + f.param + "," + std::string(to_string(f.category)) + "," +
           csv::format(f.theta) + "," + csv::format(f.lambda) + "\n";
  }
  return out;
}

void write_snapshot_log(const std::filesystem::path& path, std::span<const RegSnapshot> snapshots) {
  std::string text(kSnapshotHeader);
  text += "\n";
  for (const RegSnapshot& s : snapshots) text += snapshot_rows(s);
  csv::write_text(path, text);
}

std::vector<RegSnapshot> read_snapshot_log(const std::filesystem::path& path) {
  std::vector<RegSnapshot> snapshots;
  for (const auto& row : csv::read_table(path, kSnapshotHeader)) {
    const std::int64_t iteration = csv::parse_int(row[0], "snapshot iteration");
    if (snapshots.empty() || snapshots.back().iteration != iteration) {
      if (!snapshots.empty() && iteration < snapshots.back().iteration) {
        throw ValidationError(path.string() + ": snapshot iterations are not ascending");
      }
      snapshots.push_back({iteration, {}});
    }
    snapshots.back().factors.push_back({row[1], parse_category(row[2]), csv::parse_double(row[3], "theta"),
                                        csv::parse_double(row[4], "lambda")});
  }
  return snapshots;
}

std::string trajectory_csv(std::span<const TrajectoryRow> rows) {
  std::string out(kTrajectoryHeader);
  out += "\n";
  for (const TrajectoryRow& r : rows) {
    out += std::to_string(r.iteration) + "," + std::string(to_string(r.category)) + "," +
           (r.median ? csv::format(*r.median) : std::string()) + "\n";
  }
  return out;
}

std::string histogram_csv(const Histogram& histogram) {
  std::string out(kHistogramHeader);
  out += "\n";
  for (Category c : kCategories) {
    const auto& counts = histogram.counts[static_cast<std::size_t>(c)];
    for (std::size_t b = 0; b < counts.size(); ++b) {
      out += std::string(to_string(c)) + "," + csv::format(histogram.edges[b]) + "," +
             csv::format(histogram.edges[b + 1]) + "," + std::to_string(counts[b]) + "\n";
    }
  }
  return out;
}

std::string overflow_csv(const Histogram& histogram) {
  std::string out(kOverflowHeader);
  out += "\n";
  for (Category c : kCategories) {
    const auto i = static_cast<std::size_t>(c);
    out += std::string(to_string(c)) + "," + std::to_string(histogram.below[i]) + "," +
           std::to_string(histogram.above[i]) + "\n";
  }
  return out;
}

}  // namespace adareg::reg
