#include "adareg/eval_metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "adareg/csv.hpp"
#include "adareg/error.hpp"

namespace adareg::eval {

std::string_view to_string(Protocol p) { return p == Protocol::same_cam_same_id ? "same_cam_same_id" : "same_cam"; }

Protocol parse_protocol(std::string_view text) {
  if (text == "same_cam_same_id") return Protocol::same_cam_same_id;
  if (text == "same_cam") return Protocol::same_cam;
  throw ValidationError("unknown protocol '" + std::string(text) + "' (expected same_cam_same_id or same_cam)");
}

namespace {

std::vector<double> row_sq_norms(const ad::Tensor& m, const char* which) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += m.at(r, c) * m.at(r, c);
    if (!(s > 0.0)) throw ValidationError(std::string(which) + " embedding " + std::to_string(r) + " has zero norm");
    out[r] = s;
  }
  return out;
}

}  // namespace

ad::Tensor cosine_distance_matrix(const ad::Tensor& q, const ad::Tensor& g) {
  if (q.rank() != 2 || g.rank() != 2 || q.dim(1) != g.dim(1)) {
    throw ValidationError("distance needs two matrices of equal width, got " + ad::to_string(q.shape()) + " and " +
                          ad::to_string(g.shape()));
  }
  if (!q.all_finite() || !g.all_finite()) throw NumericError("embeddings contain non-finite values");
  const auto qn = row_sq_norms(q, "query");
  const auto gn = row_sq_norms(g, "gallery");
  const std::size_t nq = q.dim(0), ng = g.dim(0), d = q.dim(1);
  ad::Tensor out({nq, ng});
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < ng; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += q.at(i, k) * g.at(j, k);
      out.at(i, j) = std::clamp(1.0 - dot / std::sqrt(qn[i] * gn[j]), 0.0, 2.0);
    }
  }
  return out;
}

std::vector<bool> filter_valid(const SampleMeta& query, std::span<const SampleMeta> gallery, Protocol protocol) {
  if (gallery.empty()) throw ValidationError("gallery is empty");
  std::vector<bool> keep(gallery.size());
  for (std::size_t j = 0; j < gallery.size(); ++j) {
    const bool same_cam = gallery[j].camera == query.camera;
    keep[j] = protocol == Protocol::same_cam ? !same_cam : !(same_cam && gallery[j].identity == query.identity);
  }
  return keep;
}

std::optional<double> average_precision(std::span<const std::uint8_t> relevance) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < relevance.size(); ++k) {
    if (relevance[k]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

std::vector<double> cmc(std::span<const std::size_t> first_match_ranks, std::size_t max_rank) {
  std::vector<double> out(max_rank, 0.0);
  if (first_match_ranks.empty()) return out;
  std::vector<std::size_t> at(max_rank + 1, 0);
  for (auto r : first_match_ranks) {
    if (r == 0) throw ValidationError("ranks are 1-based");
    if (r <= max_rank) ++at[r];
  }
  std::size_t cumulative = 0;
  for (std::size_t k = 1; k <= max_rank; ++k) {
    cumulative += at[k];
    out[k - 1] = static_cast<double>(cumulative) / static_cast<double>(first_match_ranks.size());
  }
  return out;
}

EvalReport evaluate(const ad::Tensor& qe, std::span<const SampleMeta> qm, const ad::Tensor& ge,
                    std::span<const SampleMeta> gm, Protocol protocol, std::size_t max_rank) {
  if (qe.rank() != 2 || ge.rank() != 2) throw ValidationError("embeddings must be matrices");
  if (qe.dim(0) != qm.size() || ge.dim(0) != gm.size()) {
    throw ValidationError("embedding rows and metadata rows disagree");
  }
  if (max_rank == 0) throw ValidationError("max_rank must be >= 1");

  EvalReport rep;
  rep.protocol = protocol;
  rep.distances = cosine_distance_matrix(qe, ge);
  const std::size_t ng = gm.size();
  std::vector<std::size_t> first_ranks;
  double ap_sum = 0.0;
  for (std::size_t i = 0; i < qm.size(); ++i) {
    const auto keep = filter_valid(qm[i], gm, protocol);
    QueryResult res;
    for (std::size_t j = 0; j < ng; ++j) {
      if (keep[j]) res.ranking.push_back(j);
    }
    std::sort(res.ranking.begin(), res.ranking.end(), [&](std::size_t a, std::size_t b) {
      const double da = rep.distances.at(i, a), db = rep.distances.at(i, b);
      return da < db || (da == db && a < b);
    });
    std::vector<std::uint8_t> rel(res.ranking.size());
    for (std::size_t k = 0; k < rel.size(); ++k) rel[k] = gm[res.ranking[k]].identity == qm[i].identity;
    res.ap = average_precision(rel);
    if (res.ap) {
      res.first_match_rank = static_cast<std::size_t>(std::find(rel.begin(), rel.end(), 1) - rel.begin()) + 1;
      ap_sum += *res.ap;
      first_ranks.push_back(*res.first_match_rank);
      ++rep.valid;
    } else {
      ++rep.dropped;
    }
    rep.queries.push_back(std::move(res));
  }
  if (rep.valid == 0) throw ValidationError("no query has a valid gallery match under " + std::string(to_string(protocol)));
  rep.mean_ap = ap_sum / static_cast<double>(rep.valid);
  rep.cmc = cmc(first_ranks, max_rank);
  return rep;
}

std::string report_csv(const EvalReport& r) {
  std::string out(kReportHeader);
  out += "\nprotocol," + std::string(to_string(r.protocol)) + '\n';
  out += "mAP," + csv::format(r.mean_ap) + '\n';
  for (std::size_t k = 0; k < r.cmc.size(); ++k) out += "rank" + std::to_string(k + 1) + ',' + csv::format(r.cmc[k]) + '\n';
  out += "valid_queries," + std::to_string(r.valid) + '\n';
  out += "dropped_queries," + std::to_string(r.dropped) + '\n';
  return out;
}

std::string per_query_csv(const EvalReport& r) {
  std::string out(kPerQueryHeader);
  out += '\n';
  for (std::size_t i = 0; i < r.queries.size(); ++i) {
    const auto& q = r.queries[i];
    out += std::to_string(i) + ',' + (q.ap ? csv::format(*q.ap) : "") + ',' +
           (q.first_match_rank ? std::to_string(*q.first_match_rank) : "") + '\n';
  }
  return out;
}

std::string ranked_lists_csv(const EvalReport& r, std::span<const SampleMeta> qm, std::span<const SampleMeta> gm,
                             std::size_t top_k) {
  std::string out(kRankedHeader);
  out += '\n';
  for (std::size_t i = 0; i < r.queries.size(); ++i) {
    const auto& ranking = r.queries[i].ranking;
    for (std::size_t k = 0; k < std::min(top_k, ranking.size()); ++k) {
      const std::size_t j = ranking[k];
      out += std::to_string(i) + ',' + std::to_string(k + 1) + ',' + std::to_string(j) + ',' +
             csv::format(r.distances.at(i, j)) + ',' + (gm[j].identity == qm[i].identity ? "1" : "0") + '\n';
    }
  }
  return out;
}

void write_embeddings(const std::filesystem::path& path, const ad::Tensor& e) {
  if (e.rank() != 2) throw ValidationError("embeddings must be a matrix");
  std::string bytes;
  auto put = [&](std::uint64_t bits) {
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xffU));
  };
  put(e.dim(0));
  put(e.dim(1));
  for (double v : e.data()) put(std::bit_cast<std::uint64_t>(v));
  csv::write_text(path, bytes);
}

ad::Tensor read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto get = [&](std::size_t at) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + b])) << (8 * b);
    return bits;
  };
  if (bytes.size() < 16) throw ValidationError("embedding file '" + path.string() + "' lacks its header");
  const std::uint64_t n = get(0), d = get(8);
  if (n == 0 || d == 0 || n > bytes.size() || d > bytes.size() || (bytes.size() - 16) != n * d * 8) {
    throw ValidationError("embedding file '" + path.string() + "' holds " + std::to_string(bytes.size() - 16) +
                          " data bytes, header says " + std::to_string(n) + " x " + std::to_string(d));
  }
  std::vector<double> data(n * d);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<double>(get(16 + 8 * i));
  return ad::Tensor({n, d}, std::move(data));
}

void write_meta(const std::filesystem::path& path, std::span<const SampleMeta> meta) {
  std::string out(kMetaHeader);
  out += '\n';
  for (std::size_t i = 0; i < meta.size(); ++i) {
    out += std::to_string(i) + ',' + std::to_string(meta[i].identity) + ',' + std::to_string(meta[i].camera) + '\n';
  }
  csv::write_text(path, out);
}

std::vector<SampleMeta> read_meta(const std::filesystem::path& path) {
  std::vector<SampleMeta> out;
  for (const auto& row : csv::read_table(path, kMetaHeader)) {
    out.push_back({csv::parse_int(row[1], "identity"), csv::parse_int(row[2], "camera")});
  }
  return out;
}

}  // namespace adareg::eval
