#pragma once

#include <cstddef>
#include <span>

#include "adareg/rng.hpp"

namespace adareg::train {

struct AugConfig {
  double flip_prob = 0.5;
  std::size_t pad = 2;
  double erase_prob = 0.5;
  double erase_area_min = 0.02;
  double erase_area_max = 0.4;
  double erase_aspect_min = 0.3;
  double erase_aspect_max = 3.3;
  /// Range of the uniform noise written into erased pixels.
  double fill_lo = 0.0;
  double fill_hi = 1.0;
};

void validate(const AugConfig& config);

inline constexpr int kEraseAttempts = 100;

void flip_horizontal(std::span<double> image, std::size_t h, std::size_t w);

/// Zero-pads every side by `pad` and crops back to h x w at offset (dy, dx),
/// each in [0, 2 * pad].
void pad_crop(std::span<double> image, std::size_t h, std::size_t w, std::size_t pad, std::size_t dy, std::size_t dx);

/// Random erasing; returns the number of pixels overwritten (0 when skipped).
std::size_t random_erase(std::span<double> image, std::size_t h, std::size_t w, const AugConfig& config, Rng& rng);

/// flip -> pad -> random crop -> random erasing, in place.
void augment(std::span<double> image, std::size_t h, std::size_t w, const AugConfig& config, Rng& rng);

}  // namespace adareg::train
