#include "pfsa/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pfsa/dataset.hpp"
#include "pfsa/errors.hpp"

namespace pfsa {

double RankingResult::cmc_at(std::size_t k) const {
  if (k == 0) throw ContractError("CMC ranks are 1-based");
  if (cmc.empty()) return 0.0;
  return cmc[std::min(k, cmc.size()) - 1];
}

Tensor distance_matrix(std::span<const Tensor> queries, std::span<const Tensor> gallery) {
  if (queries.empty() || gallery.empty()) throw DimensionError("distance_matrix: empty query or gallery set");
  const std::size_t d = queries.front().size();
  const auto check = [d](const Tensor& t) {
    if (t.size() != d) {
      throw DimensionError("distance_matrix: embedding of length " + std::to_string(t.size()) + " vs " +
                           std::to_string(d));
    }
  };
  for (const auto& q : queries) check(q);
  for (const auto& g : gallery) check(g);
  Tensor dist({queries.size(), gallery.size()});
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto q = queries[qi].data();
    for (std::size_t gi = 0; gi < gallery.size(); ++gi) {
      const auto g = gallery[gi].data();
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = q[k] - g[k];
        acc += diff * diff;
      }
      dist(qi, gi) = std::sqrt(acc);
    }
  }
  return dist;
}

RankingResult evaluate_protocol(const Tensor& dist, std::span<const ImageMeta> query_meta,
                                std::span<const ImageMeta> gallery_meta, std::size_t max_rank) {
  if (max_rank < 1) throw ConfigError("max_rank must be at least 1");
  require_rank(dist, 2, "evaluate_protocol distances");
  if (dist.dim(0) != query_meta.size() || dist.dim(1) != gallery_meta.size()) {
    throw DimensionError("evaluate_protocol: distances " + shape_string(dist.shape()) + " vs " +
                         std::to_string(query_meta.size()) + " queries and " + std::to_string(gallery_meta.size()) +
                         " gallery items");
  }
  const std::size_t num_gallery = gallery_meta.size();
  RankingResult result;
  std::vector<std::size_t> hits(max_rank, 0);
  std::vector<std::size_t> order(num_gallery);

  for (std::size_t q = 0; q < query_meta.size(); ++q) {
    const ImageMeta& qm = query_meta[q];
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist(q, a) < dist(q, b); });

    std::size_t rank = 0;  // position in the junk-filtered list
    std::size_t matches = 0;
    std::size_t first_match = 0;
    double precision_sum = 0.0;
    for (std::size_t g : order) {
      const ImageMeta& gm = gallery_meta[g];
      const bool same_id = gm.identity == qm.identity;
      if (same_id && gm.camera == qm.camera) continue;
      ++rank;
      if (!same_id) continue;
      if (matches == 0) first_match = rank;
      ++matches;
      precision_sum += static_cast<double>(matches) / static_cast<double>(rank);
    }
    if (matches == 0) {
      result.skipped_queries.push_back(q);
      continue;
    }
    if (first_match <= max_rank) ++hits[first_match - 1];
    result.per_query_ap.push_back({q, precision_sum / static_cast<double>(matches)});
  }

  const std::size_t evaluated = result.per_query_ap.size();
  if (evaluated == 0) throw ConfigError("evaluate_protocol: no query has a valid cross-camera match in the gallery");
  result.cmc.resize(max_rank);
  std::size_t cumulative = 0;
  for (std::size_t k = 0; k < max_rank; ++k) {
    cumulative += hits[k];
    result.cmc[k] = static_cast<double>(cumulative) / static_cast<double>(evaluated);
  }
  double ap_sum = 0.0;
  for (const auto& qa : result.per_query_ap) ap_sum += qa.ap;
  result.map = ap_sum / static_cast<double>(evaluated);
  return result;
}

RankingResult evaluate_model(const Params& params, const ModelConfig& cfg, std::span<const Sample> dataset,
                             std::size_t max_rank) {
  std::vector<Tensor> query_emb, gallery_emb;
  std::vector<ImageMeta> query_meta, gallery_meta;
  for (const auto& s : dataset) {
    if (s.split == Split::query) {
      query_emb.push_back(extract_embedding(params, cfg, s.image));
      query_meta.push_back({s.identity, s.camera});
    } else if (s.split == Split::gallery) {
      gallery_emb.push_back(extract_embedding(params, cfg, s.image));
      gallery_meta.push_back({s.identity, s.camera});
    }
  }
  if (query_emb.empty() || gallery_emb.empty()) throw ConfigError("evaluate_model: dataset lacks query or gallery images");
  return evaluate_protocol(distance_matrix(query_emb, gallery_emb), query_meta, gallery_meta, max_rank);
}

std::string format_report(const RankingResult& result) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "cmc_1 = " << result.cmc_at(1) << '\n';
  os << "cmc_5 = " << result.cmc_at(5) << '\n';
  os << "cmc_10 = " << result.cmc_at(10) << '\n';
  os << "map = " << result.map << '\n';
  os << "skipped = " << result.skipped_queries.size() << '\n';
  return os.str();
}

void write_per_query_csv(const RankingResult& result, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.precision(17);
  os << "query,ap\n";
  for (const auto& qa : result.per_query_ap) os << qa.query << ',' << qa.ap << '\n';
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace pfsa
