#include "adareg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "adareg/error.hpp"

namespace adareg::train {

void validate(const AugConfig& c) {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string(name) + " must lie in [0, 1]");
  };
  prob(c.flip_prob, "aug.flip_prob");
  prob(c.erase_prob, "aug.erase_prob");
  if (!(c.erase_area_min > 0.0 && c.erase_area_min <= c.erase_area_max && c.erase_area_max < 1.0)) {
    throw ValidationError("erase area range must satisfy 0 < min <= max < 1");
  }
  if (!(c.erase_aspect_min > 0.0 && c.erase_aspect_min <= c.erase_aspect_max)) {
    throw ValidationError("erase aspect range must satisfy 0 < min <= max");
  }
  if (!(c.fill_lo <= c.fill_hi)) throw ValidationError("erase fill range must satisfy lo <= hi");
}

void flip_horizontal(std::span<double> image, std::size_t h, std::size_t w) {
  for (std::size_t y = 0; y < h; ++y) std::reverse(image.begin() + y * w, image.begin() + (y + 1) * w);
}

void pad_crop(std::span<double> image, std::size_t h, std::size_t w, std::size_t pad, std::size_t dy, std::size_t dx) {
  if (dy > 2 * pad || dx > 2 * pad) throw ValidationError("crop offset exceeds the padded border");
  std::vector<double> out(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t py = y + dy;  // row in the padded image
    if (py < pad || py >= pad + h) continue;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t px = x + dx;
      if (px < pad || px >= pad + w) continue;
      out[y * w + x] = image[(py - pad) * w + (px - pad)];
    }
  }
  std::copy(out.begin(), out.end(), image.begin());
}

std::size_t random_erase(std::span<double> image, std::size_t h, std::size_t w, const AugConfig& c, Rng& rng) {
  const double area = static_cast<double>(h * w);
  std::uniform_real_distribution<double> area_dist(c.erase_area_min, c.erase_area_max);
  std::uniform_real_distribution<double> aspect_dist(c.erase_aspect_min, c.erase_aspect_max);
  for (int attempt = 0; attempt < kEraseAttempts; ++attempt) {
    const double target = area * area_dist(rng);
    const double aspect = aspect_dist(rng);
    auto eh = static_cast<std::size_t>(std::lround(std::sqrt(target * aspect)));
    auto ew = static_cast<std::size_t>(std::lround(std::sqrt(target / aspect)));
    if (eh == 0 || ew == 0) continue;
    eh = std::min(eh, h);
    ew = std::min(ew, w);
    const std::size_t top = std::uniform_int_distribution<std::size_t>(0, h - eh)(rng);
    const std::size_t left = std::uniform_int_distribution<std::size_t>(0, w - ew)(rng);
    std::uniform_real_distribution<double> fill(c.fill_lo, c.fill_hi);
    for (std::size_t y = top; y < top + eh; ++y) {
      for (std::size_t x = left; x < left + ew; ++x) image[y * w + x] = fill(rng);
    }
    return eh * ew;
  }
  return 0;
}

void augment(std::span<double> image, std::size_t h, std::size_t w, const AugConfig& c, Rng& rng) {
  if (image.size() != h * w) throw ValidationError("image size does not match h x w");
  if (uniform01(rng) < c.flip_prob) flip_horizontal(image, h, w);
  if (c.pad > 0) {
    std::uniform_int_distribution<std::size_t> offset(0, 2 * c.pad);
    const std::size_t dy = offset(rng);
    const std::size_t dx = offset(rng);
    pad_crop(image, h, w, c.pad, dy, dx);
  }
  if (uniform01(rng) < c.erase_prob) random_erase(image, h, w, c, rng);
}

}  // namespace adareg::train
