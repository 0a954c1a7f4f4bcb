#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adareg/tensor.hpp"

namespace adareg::eval {

enum class Protocol {
  same_cam_same_id,  // drop gallery samples sharing identity and camera with the query
  same_cam,          // drop every gallery sample from the query's camera
};
std::string_view to_string(Protocol protocol);
Protocol parse_protocol(std::string_view text);

struct SampleMeta {
  std::int64_t identity;
  std::int64_t camera;
  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

/// 1 - <q, g> / (|q| |g|), clamped to [0, 2]. Zero-norm rows are rejected.
ad::Tensor cosine_distance_matrix(const ad::Tensor& queries, const ad::Tensor& gallery);

/// true = gallery sample stays in the ranking.
std::vector<bool> filter_valid(const SampleMeta& query, std::span<const SampleMeta> gallery, Protocol protocol);

/// Non-interpolated AP of a ranked 0/1 relevance list; empty when nothing is relevant.
std::optional<double> average_precision(std::span<const std::uint8_t> relevance);

/// CMC[k-1] = fraction of the given 1-based first-match ranks that are <= k.
std::vector<double> cmc(std::span<const std::size_t> first_match_ranks, std::size_t max_rank);

struct QueryResult {
  std::optional<double> ap;                     // empty for a dropped query
  std::optional<std::size_t> first_match_rank;  // 1-based
  std::vector<std::size_t> ranking;             // kept gallery indices, nearest first
};

struct EvalReport {
  Protocol protocol;
  ad::Tensor distances;
  std::vector<QueryResult> queries;
  double mean_ap = 0.0;
  std::vector<double> cmc;  // ranks 1..max_rank
  std::size_t valid = 0;
  std::size_t dropped = 0;
};

/// Distance matrix, per-query filtering, ascending sort with ties broken by
/// gallery index, AP and first-match rank. mAP and CMC average the valid
/// queries in ascending query order; zero valid queries is an error.
EvalReport evaluate(const ad::Tensor& query_embeddings, std::span<const SampleMeta> query_meta,
                    const ad::Tensor& gallery_embeddings, std::span<const SampleMeta> gallery_meta, Protocol protocol,
                    std::size_t max_rank = 20);

inline constexpr std::string_view kReportHeader = "metric,value";
inline constexpr std::string_view kPerQueryHeader = "query_index,ap,first_match_rank";
inline constexpr std::string_view kRankedHeader = "query_index,rank,gallery_index,distance,correct";
inline constexpr std::string_view kMetaHeader = "index,identity,camera";

std::string report_csv(const EvalReport& report);
std::string per_query_csv(const EvalReport& report);
/// The first `top_k` kept gallery entries of every query.
std::string ranked_lists_csv(const EvalReport& report, std::span<const SampleMeta> query_meta,
                             std::span<const SampleMeta> gallery_meta, std::size_t top_k);

/// u64 count, u64 dim, then count * dim little-endian f64 values.
void write_embeddings(const std::filesystem::path& path, const ad::Tensor& embeddings);
ad::Tensor read_embeddings(const std::filesystem::path& path);
void write_meta(const std::filesystem::path& path, std::span<const SampleMeta> meta);
std::vector<SampleMeta> read_meta(const std::filesystem::path& path);

}  // namespace adareg::eval
