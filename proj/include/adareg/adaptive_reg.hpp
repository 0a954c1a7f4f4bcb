#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adareg/layers.hpp"
#include "adareg/tape.hpp"

namespace adareg::reg {

/// Which kind of array a regularization factor is attached to.
enum class Category { conv_kernel, conv_bias, bn_gamma, bn_beta, dense_kernel };

inline constexpr std::array<Category, 5> kCategories{Category::conv_kernel, Category::conv_bias, Category::bn_gamma,
                                                     Category::bn_beta, Category::dense_kernel};

std::string_view to_string(Category category);
Category parse_category(std::string_view text);

/// Maps a (layer, field) pair onto the five-way taxonomy. A dense bias has no
/// category and is rejected.
Category classify_category(nn::LayerKind layer, nn::FieldKind field);

/// f(x) = 0 for x < -c, 1 for x > c, x / (2c) + 0.5 otherwise.
double hard_sigmoid(double x, double half_width);
/// 1 / (2c) on the closed interval [-c, c], 0 strictly outside.
double hard_sigmoid_derivative(double x, double half_width);
/// Element-wise hard sigmoid recorded on the tape.
ad::Var hard_sigmoid(ad::Var x, double half_width);

enum class RegMode { adaptive, constant, unconstrained, off };
std::string_view to_string(RegMode mode);
RegMode parse_reg_mode(std::string_view text);

struct RegConfig {
  RegMode mode = RegMode::adaptive;
  double amplitude = 0.0025;
  double half_width = 2.5;
  double theta_init = 0.0;
  double constant_lambda = 0.00125;
};

/// One trainable scalar theta attached to exactly one network parameter array.
/// The factor's value is lambda = amplitude * hard_sigmoid(theta, half_width).
struct RegFactor {
  ad::ParamId theta;
  ad::ParamId param;
  double amplitude;
  double half_width;
  Category category;
};

/// Registers a theta scalar (role `theta`, named "<param>.theta") for every
/// described parameter, in descriptor order.
std::vector<RegFactor> attach_factors(ad::ParameterStore& params, std::span<const nn::ParamDescriptor> descriptors,
                                      const RegConfig& config);

double lambda_of(const RegFactor& factor, const ad::ParameterStore& params);
ad::Var lambda_of(ad::Tape& tape, const RegFactor& factor);

/// sum_n A f(theta_n) ||w_n||^2 in factor order. Gradients reach both the
/// weights and the thetas. The factors must cover every weight-role array of
/// the store exactly once.
ad::Var adaptive_penalty(ad::Tape& tape, std::span<const RegFactor> factors);

/// lambda * sum_n ||w_n||^2, accumulated as sum_n (lambda ||w_n||^2) so that it
/// matches a saturated adaptive penalty bit for bit.
ad::Var constant_penalty(ad::Tape& tape, std::span<const ad::ParamId> params, double lambda);

/// Ablation: sum_n theta_n ||w_n||^2 with raw, unbounded thetas. Refuses to
/// run unless `ablation_enabled`.
ad::Var unconstrained_penalty(ad::Tape& tape, std::span<const RegFactor> factors, bool ablation_enabled);

/// The penalty for `config.mode`; `off` yields a constant zero.
ad::Var penalty(ad::Tape& tape, std::span<const RegFactor> factors, const RegConfig& config);

/// lambda_n as used by `config.mode` (the raw theta in unconstrained mode,
/// the configured constant in constant mode, 0 when off).
double effective_lambda(const RegFactor& factor, const ad::ParameterStore& params, const RegConfig& config);

struct FactorValue {
  std::string param;
  Category category;
  double theta;
  double lambda;
};

struct RegSnapshot {
  std::int64_t iteration = 0;
  std::vector<FactorValue> factors;
};

RegSnapshot take_snapshot(std::int64_t iteration, const ad::ParameterStore& params, std::span<const RegFactor> factors,
                          const RegConfig& config);

struct TrajectoryRow {
  std::int64_t iteration;
  Category category;
  std::optional<double> median;  // empty when the category has no factors
};

/// Per-snapshot, per-category median of lambda. Rows are ordered by snapshot,
/// then category.
std::vector<TrajectoryRow> median_trajectory(std::span<const RegSnapshot> snapshots);

double median(std::vector<double> values);

struct HistogramRange {
  double lo = 0.0;
  double hi = 0.0025;
  std::size_t buckets = 5;
};

struct Histogram {
  std::vector<double> edges;                      // buckets + 1 values, lo .. hi
  std::array<std::vector<std::size_t>, 5> counts;  // per category, per bucket
  std::array<std::size_t, 5> below{};              // lambda < lo
  std::array<std::size_t, 5> above{};              // lambda > hi
  std::size_t overflow() const;
};

/// Even subdivision of [lo, hi]; buckets are half-open except the last, which
/// is closed above. Out-of-range factors land in below/above.
Histogram factor_histogram(const RegSnapshot& snapshot, const HistogramRange& range = {});

// CSV surfaces.
inline constexpr std::string_view kSnapshotHeader = "iteration,param,category,theta,lambda";
inline constexpr std::string_view kTrajectoryHeader = "iteration,category,median_lambda";
inline constexpr std::string_view kHistogramHeader = "category,bucket_lo,bucket_hi,count";
inline constexpr std::string_view kOverflowHeader = "category,below,above";

std::string snapshot_rows(const RegSnapshot& snapshot);
void write_snapshot_log(const std::filesystem::path& path, std::span<const RegSnapshot> snapshots);
std::vector<RegSnapshot> read_snapshot_log(const std::filesystem::path& path);
std::string trajectory_csv(std::span<const TrajectoryRow> rows);
std::string histogram_csv(const Histogram& histogram);
std::string overflow_csv(const Histogram& histogram);

}  // namespace adareg::reg
