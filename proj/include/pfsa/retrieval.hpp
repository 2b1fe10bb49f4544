#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pfsa/model.hpp"
#include "pfsa/tensor.hpp"

namespace pfsa {

struct Sample;

struct ImageMeta {
  int identity = 0;
  int camera = 0;
};

struct QueryAp {
  std::size_t query = 0;
  double ap = 0.0;
  friend bool operator==(const QueryAp&, const QueryAp&) = default;
};

/// Cross-camera retrieval scores.
struct RankingResult {
  std::vector<double> cmc;  // cmc[k-1] = fraction of evaluated queries with a first match at rank <= k
  double map = 0.0;
  std::vector<QueryAp> per_query_ap;
  std::vector<std::size_t> skipped_queries;  // queries without any valid match

  /// CMC at 1-based rank k; ranks past the computed curve report its last value.
  double cmc_at(std::size_t k) const;

  friend bool operator==(const RankingResult&, const RankingResult&) = default;
};

/// Euclidean distance between every query and gallery embedding, as a Q×G tensor.
Tensor distance_matrix(std::span<const Tensor> queries, std::span<const Tensor> gallery);

/// Single-query evaluation: gallery items sharing identity and camera with the query are ignored,
/// same-identity items from other cameras are matches. Ranking is by ascending distance, ties by
/// ascending gallery index.
RankingResult evaluate_protocol(const Tensor& dist, std::span<const ImageMeta> query_meta,
                                std::span<const ImageMeta> gallery_meta, std::size_t max_rank);

/// Embeds the query and gallery splits of `dataset` and evaluates them.
RankingResult evaluate_model(const Params& params, const ModelConfig& cfg, std::span<const Sample> dataset,
                             std::size_t max_rank = 10);

/// Key-value block: cmc_1, cmc_5, cmc_10, map, skipped.
std::string format_report(const RankingResult& result);

/// CSV with header `query,ap`.
void write_per_query_csv(const RankingResult& result, const std::filesystem::path& path);

}  // namespace pfsa
