#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "pfsa/tensor.hpp"

namespace pfsa {

enum class CamSource { gap, sa, full_fc };

std::string_view cam_source_name(CamSource source) noexcept;

/// Class activation map at feature-map resolution.
struct Cam {
  Tensor values;  // H×W
  int class_id = 0;
  CamSource provenance = CamSource::gap;
};

/// M(i,j) = Σ_k w_k·f_k(i,j): the map implied by pooling followed by a linear classifier.
Cam cam_gap(const Tensor& features, std::span<const double> class_weights, int class_id = 0);

/// CAM of the attention-pooled classifier: cam_gap(f, w) ⊙ p(f).
Cam cam_sa(const Tensor& features, std::span<const double> class_weights, int class_id = 0);

/// CAM of a fully-connected classifier with one weight per position and channel, w [H×W×C].
Cam cam_full_fc(const Tensor& features, const Tensor& position_weights, int class_id = 0);

enum class HeatmapFormat { csv, pgm };

/// 8-bit grey levels after min→0, max→255 affine normalisation; a constant map is all 128.
std::vector<std::uint8_t> heatmap_levels(const Tensor& values);

/// Writes a CSV (one line per row, shortest round-trip decimals) or a binary P5 PGM.
void heatmap_export(const Cam& cam, const std::filesystem::path& path, HeatmapFormat format);

/// Writes any H×W tensor as CSV; used for attention-map dumps alongside CAMs.
void write_matrix_csv(const Tensor& values, const std::filesystem::path& path);

/// Parses a header-less numeric CSV into an H×W tensor.
Tensor read_matrix_csv(const std::filesystem::path& path);

}  // namespace pfsa
