#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "adareg/tensor.hpp"

namespace adareg::data {

enum class Split : std::uint8_t { train, query, gallery };
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

enum class Difficulty { easy, hard };
std::string_view to_string(Difficulty difficulty);
Difficulty parse_difficulty(std::string_view text);

struct GenConfig {
  std::size_t num_train_ids = 32;
  std::size_t num_test_ids = 24;
  std::size_t cameras = 3;
  std::size_t samples_per_id_per_camera = 4;
  std::size_t height = 32;
  std::size_t width = 16;
  std::size_t latent_dim = 16;
  double camera_strength = 0.5;
  double noise = 0.05;
  Difficulty difficulty = Difficulty::easy;
  std::uint64_t seed = 1;
};

void validate(const GenConfig& config);

struct Sample {
  std::vector<double> image;  // H x W, row-major, values in [0, 1]
  std::int64_t identity;      // 1-based
  std::int64_t camera;        // 1-based
  Split split;
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Sample> samples;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Train identities are 1..num_train_ids, test identities follow. Every
/// identity is seen by every camera; for test identities the first sample of
/// each (identity, camera) pair is a query and the rest are gallery.
Dataset generate(const GenConfig& config);

std::vector<std::size_t> indices_of(const Dataset& dataset, Split split);
std::size_t count_identities(const Dataset& dataset, Split split);

/// N x 1 x H x W batch of the listed samples.
ad::Tensor stack_images(const Dataset& dataset, std::span<const std::size_t> indices);

inline constexpr std::string_view kManifestHeader = "index,identity,camera,split,file_offset";
inline constexpr std::string_view kGeometryHeader = "height,width";

/// Writes manifest.csv, images.bin (little-endian f64, row-major,
/// concatenated in manifest order) and geometry.csv into `dir`.
void save(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load(const std::filesystem::path& dir);

/// Fraction of queries whose nearest gallery-identity centroid (raw pixels,
/// Euclidean) is their own identity. Chance is 1 / num_test_ids.
double nearest_centroid_accuracy(const Dataset& dataset);

}  // namespace adareg::data
