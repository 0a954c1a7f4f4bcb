#include "adareg/synth_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <string>

#include "adareg/csv.hpp"
#include "adareg/error.hpp"
#include "adareg/rng.hpp"

namespace adareg::data {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "query") return Split::query;
  if (text == "gallery") return Split::gallery;
  throw ValidationError("unknown split '" + std::string(text) + "'");
}

std::string_view to_string(Difficulty d) { return d == Difficulty::easy ? "easy" : "hard"; }

Difficulty parse_difficulty(std::string_view text) {
  if (text == "easy") return Difficulty::easy;
  if (text == "hard") return Difficulty::hard;
  throw ValidationError("unknown difficulty '" + std::string(text) + "' (expected easy or hard)");
}

void validate(const GenConfig& c) {
  if (c.cameras < 2) throw ValidationError("cameras must be >= 2 so every test identity is seen by two cameras");
  if (c.samples_per_id_per_camera < 2) {
    throw ValidationError("samples_per_id_per_camera must be >= 2 (one query plus gallery)");
  }
  if (c.num_train_ids < 1) throw ValidationError("num_train_ids must be >= 1");
  if (c.num_test_ids < 1) throw ValidationError("num_test_ids must be >= 1");
  if (c.height < 2 || c.width < 2) throw ValidationError("image size must be at least 2x2");
  if (c.latent_dim < 1) throw ValidationError("latent_dim must be >= 1");
  if (!(c.camera_strength >= 0.0) || !std::isfinite(c.camera_strength)) {
    throw ValidationError("camera_strength must be finite and >= 0");
  }
  if (!(c.noise >= 0.0) || !std::isfinite(c.noise)) throw ValidationError("noise must be finite and >= 0");
}

namespace {

using Image = std::vector<double>;

// Separable cosine basis, lowest total frequency first.
std::vector<Image> cosine_basis(std::size_t h, std::size_t w, std::size_t count) {
  std::vector<std::pair<std::size_t, std::size_t>> freqs;
  for (std::size_t total = 1; freqs.size() < count; ++total) {
    for (std::size_t u = 0; u <= total && freqs.size() < count; ++u) freqs.emplace_back(u, total - u);
  }
  std::vector<Image> basis;
  for (auto [u, v] : freqs) {
    Image b(h * w);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        b[y * w + x] = std::cos(std::numbers::pi * static_cast<double>(u) * (y + 0.5) / static_cast<double>(h)) *
                       std::cos(std::numbers::pi * static_cast<double>(v) * (x + 0.5) / static_cast<double>(w));
      }
    }
    basis.push_back(std::move(b));
  }
  return basis;
}

// Random basis mix standardized to mean 0 and unit standard deviation.
Image pattern(const std::vector<Image>& basis, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Image p(basis.front().size(), 0.0);
  for (const auto& b : basis) {
    const double z = normal(rng);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += z * b[i];
  }
  double mean = 0.0;
  for (double v : p) mean += v;
  mean /= static_cast<double>(p.size());
  double var = 0.0;
  for (double v : p) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(p.size()));
  for (double& v : p) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return p;
}

struct Camera {
  double gain;
  double offset;
  long shift_y;
  long shift_x;
  Image nuisance;
};

std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

// Shift with edge replication.
Image shifted(const Image& src, std::size_t h, std::size_t w, long dy, long dx) {
  Image out(h * w);
  const long hh = static_cast<long>(h), ww = static_cast<long>(w);
  for (long y = 0; y < hh; ++y) {
    const long sy = std::clamp(y - dy, 0L, hh - 1);
    for (long x = 0; x < ww; ++x) {
      const long sx = std::clamp(x - dx, 0L, ww - 1);
      out[static_cast<std::size_t>(y * ww + x)] = src[static_cast<std::size_t>(sy * ww + sx)];
    }
  }
  return out;
}

}  // namespace

Dataset generate(const GenConfig& config) {
  validate(config);
  const double factor = config.difficulty == Difficulty::hard ? 2.0 : 1.0;
  const double strength = config.camera_strength * factor;
  const double noise = config.noise * factor;
  const std::size_t h = config.height, w = config.width;
  const auto basis = cosine_basis(h, w, config.latent_dim);

  std::vector<Camera> cameras;
  const long max_shift = std::lround(strength * 4.0);
  for (std::size_t c = 0; c < config.cameras; ++c) {
    Rng rng(derive_seed(config.seed, "camera", c));
    Camera cam;
    cam.gain = 1.0 + strength * (uniform01(rng) - 0.5);
    cam.offset = strength * 0.5 * (uniform01(rng) - 0.5);
    cam.shift_y = static_cast<long>(uniform_int(rng, -max_shift, max_shift));
    cam.shift_x = static_cast<long>(uniform_int(rng, -max_shift, max_shift));
    cam.nuisance = pattern(basis, rng);
    cameras.push_back(std::move(cam));
  }

  Dataset ds;
  ds.height = h;
  ds.width = w;
  const std::size_t total_ids = config.num_train_ids + config.num_test_ids;
  for (std::size_t id = 1; id <= total_ids; ++id) {
    Rng id_rng(derive_seed(config.seed, "identity", id));
    const Image base = pattern(basis, id_rng);
    const bool test = id > config.num_train_ids;
    for (std::size_t c = 0; c < config.cameras; ++c) {
      const Camera& cam = cameras[c];
      for (std::size_t k = 0; k < config.samples_per_id_per_camera; ++k) {
        Rng rng(derive_seed(config.seed, "sample", id, (static_cast<std::uint64_t>(c) << 32) | k));
        std::normal_distribution<double> normal(0.0, 1.0);
        const long jitter = static_cast<long>(uniform_int(rng, -1, 1));
        Image img = shifted(base, h, w, cam.shift_y, cam.shift_x + jitter);
        for (std::size_t i = 0; i < img.size(); ++i) {
          const double v = 0.5 + 0.2 * img[i] + 0.05 * strength * cam.nuisance[i];
          img[i] = std::clamp(cam.gain * v + cam.offset + noise * normal(rng), 0.0, 1.0);
        }
        const Split split = !test ? Split::train : (k == 0 ? Split::query : Split::gallery);
        ds.samples.push_back({std::move(img), static_cast<std::int64_t>(id), static_cast<std::int64_t>(c + 1), split});
      }
    }
  }
  return ds;
}

std::vector<std::size_t> indices_of(const Dataset& dataset, Split split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    if (dataset.samples[i].split == split) out.push_back(i);
  }
  return out;
}

std::size_t count_identities(const Dataset& dataset, Split split) {
  std::map<std::int64_t, int> ids;
  for (const auto& s : dataset.samples) {
    if (s.split == split) ids[s.identity] = 1;
  }
  return ids.size();
}

ad::Tensor stack_images(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("cannot stack an empty batch");
  const std::size_t plane = dataset.height * dataset.width;
  std::vector<double> data;
  data.reserve(indices.size() * plane);
  for (std::size_t i : indices) {
    if (i >= dataset.samples.size()) throw ValidationError("sample index " + std::to_string(i) + " out of range");
    const auto& img = dataset.samples[i].image;
    data.insert(data.end(), img.begin(), img.end());
  }
  return ad::Tensor({indices.size(), 1, dataset.height, dataset.width}, std::move(data));
}

void save(const Dataset& dataset, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  const std::size_t plane = dataset.height * dataset.width;
  std::string manifest(kManifestHeader);
  manifest += '\n';
  std::string blob;
  blob.reserve(dataset.samples.size() * plane * 8);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& s = dataset.samples[i];
    if (s.image.size() != plane) throw ValidationError("sample " + std::to_string(i) + " has the wrong pixel count");
    manifest += std::to_string(i) + ',' + std::to_string(s.identity) + ',' + std::to_string(s.camera) + ',' +
                std::string(to_string(s.split)) + ',' + std::to_string(blob.size()) + '\n';
    for (double v : s.image) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xffU));
    }
  }
  csv::write_text(dir / "manifest.csv", manifest);
  csv::write_text(dir / "images.bin", blob);
  csv::write_text(dir / "geometry.csv",
                  std::string(kGeometryHeader) + '\n' + std::to_string(dataset.height) + ',' +
                      std::to_string(dataset.width) + '\n');
}

Dataset load(const std::filesystem::path& dir) {
  Dataset ds;
  const auto geometry = csv::read_table(dir / "geometry.csv", kGeometryHeader);
  if (geometry.size() != 1) throw ValidationError("geometry.csv must hold exactly one row");
  const auto h = csv::parse_int(geometry[0][0], "height");
  const auto w = csv::parse_int(geometry[0][1], "width");
  if (h < 1 || w < 1) throw ValidationError("geometry.csv holds a non-positive image size");
  ds.height = static_cast<std::size_t>(h);
  ds.width = static_cast<std::size_t>(w);
  const std::size_t bytes_per = ds.height * ds.width * 8;

  const auto rows = csv::read_table(dir / "manifest.csv", kManifestHeader);
  const auto blob_path = dir / "images.bin";
  std::ifstream in(blob_path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + blob_path.string() + "'");
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() != rows.size() * bytes_per) {
    throw ValidationError("images.bin holds " + std::to_string(blob.size()) + " bytes, manifest of " +
                          std::to_string(rows.size()) + " samples expects " + std::to_string(rows.size() * bytes_per));
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (csv::parse_int(r[0], "index") != static_cast<std::int64_t>(i)) {
      throw ValidationError("manifest row " + std::to_string(i + 1) + " is out of order");
    }
    const auto offset = csv::parse_int(r[4], "file_offset");
    if (offset != static_cast<std::int64_t>(i * bytes_per)) {
      throw ValidationError("manifest row " + std::to_string(i) + " has file_offset " + std::to_string(offset) +
                            ", expected " + std::to_string(i * bytes_per));
    }
    Sample s;
    s.identity = csv::parse_int(r[1], "identity");
    s.camera = csv::parse_int(r[2], "camera");
    if (s.identity < 1 || s.camera < 1) throw ValidationError("manifest row " + std::to_string(i) + " has a label < 1");
    s.split = parse_split(r[3]);
    s.image.resize(ds.height * ds.width);
    for (std::size_t p = 0; p < s.image.size(); ++p) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[offset + p * 8 + b])) << (8 * b);
      }
      s.image[p] = std::bit_cast<double>(bits);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

double nearest_centroid_accuracy(const Dataset& dataset) {
  const std::size_t plane = dataset.height * dataset.width;
  std::map<std::int64_t, std::pair<std::vector<double>, std::size_t>> centroids;
  for (const auto& s : dataset.samples) {
    if (s.split != Split::gallery) continue;
    auto& [sum, n] = centroids[s.identity];
    if (sum.empty()) sum.assign(plane, 0.0);
    for (std::size_t p = 0; p < plane; ++p) sum[p] += s.image[p];
    ++n;
  }
  if (centroids.empty()) throw ValidationError("dataset has no gallery samples");
  for (auto& [id, c] : centroids) {
    for (double& v : c.first) v /= static_cast<double>(c.second);
  }
  std::size_t correct = 0, total = 0;
  for (const auto& s : dataset.samples) {
    if (s.split != Split::query) continue;
    double best = std::numeric_limits<double>::infinity();
    std::int64_t best_id = -1;
    for (const auto& [id, c] : centroids) {
      double d = 0.0;
      for (std::size_t p = 0; p < plane; ++p) d += (s.image[p] - c.first[p]) * (s.image[p] - c.first[p]);
      if (d < best) {
        best = d;
        best_id = id;
      }
    }
    correct += best_id == s.identity;
    ++total;
  }
  if (total == 0) throw ValidationError("dataset has no query samples");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace adareg::data
