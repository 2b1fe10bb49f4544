#include "pfsa/cam.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "pfsa/attention.hpp"
#include "pfsa/errors.hpp"

namespace pfsa {

std::string_view cam_source_name(CamSource source) noexcept {
  switch (source) {
    case CamSource::gap: return "gap";
    case CamSource::sa: return "sa";
    case CamSource::full_fc: return "full_fc";
  }
  return "unknown";
}

namespace {

void require_weights(const Tensor& features, std::span<const double> class_weights) {
  require_rank(features, 3, "cam input");
  if (class_weights.size() != features.dim(0)) {
    throw DimensionError("cam: " + std::to_string(class_weights.size()) + " class weights for " +
                         std::to_string(features.dim(0)) + " channels");
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::ofstream open_for_write(const std::filesystem::path& path, std::ios::openmode mode) {
  std::ofstream os(path, mode);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  return os;
}

}  // namespace

Cam cam_gap(const Tensor& features, std::span<const double> class_weights, int class_id) {
  require_weights(features, class_weights);
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  Tensor values({h, w});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) values(i, j) += class_weights[k] * features(k, i, j);
    }
  }
  return {std::move(values), class_id, CamSource::gap};
}

Cam cam_sa(const Tensor& features, std::span<const double> class_weights, int class_id) {
  Cam cam = cam_gap(features, class_weights, class_id);
  const Tensor p = attention_map(features).weights;
  for (std::size_t n = 0; n < cam.values.size(); ++n) cam.values[n] *= p[n];
  cam.provenance = CamSource::sa;
  return cam;
}

Cam cam_full_fc(const Tensor& features, const Tensor& position_weights, int class_id) {
  require_rank(features, 3, "cam_full_fc input");
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  require_same_shape(position_weights.shape(), Shape{h, w, c}, "cam_full_fc weights");
  Tensor values({h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < c; ++k) acc += position_weights(i, j, k) * features(k, i, j);
      values(i, j) = acc;
    }
  }
  return {std::move(values), class_id, CamSource::full_fc};
}

std::vector<std::uint8_t> heatmap_levels(const Tensor& values) {
  if (!values.all_finite()) throw ContractError("heatmap: map contains non-finite values");
  const auto data = values.data();
  const auto [lo_it, hi_it] = std::minmax_element(data.begin(), data.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<std::uint8_t> levels(data.size(), 128);
  if (hi > lo) {
    for (std::size_t n = 0; n < data.size(); ++n) {
      levels[n] = static_cast<std::uint8_t>(std::lround((data[n] - lo) / (hi - lo) * 255.0));
    }
  }
  return levels;
}

void write_matrix_csv(const Tensor& values, const std::filesystem::path& path) {
  require_rank(values, 2, "csv export");
  auto os = open_for_write(path, std::ios::out | std::ios::trunc);
  for (std::size_t i = 0; i < values.dim(0); ++i) {
    for (std::size_t j = 0; j < values.dim(1); ++j) {
      if (j) os << ',';
      os << format_double(values(i, j));
    }
    os << '\n';
  }
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

void heatmap_export(const Cam& cam, const std::filesystem::path& path, HeatmapFormat format) {
  require_rank(cam.values, 2, "heatmap_export");
  if (format == HeatmapFormat::csv) {
    if (!cam.values.all_finite()) throw ContractError("heatmap: map contains non-finite values");
    write_matrix_csv(cam.values, path);
    return;
  }
  const auto levels = heatmap_levels(cam.values);
  auto os = open_for_write(path, std::ios::out | std::ios::trunc | std::ios::binary);
  os << "P5\n" << cam.values.dim(1) << ' ' << cam.values.dim(0) << "\n255\n";
  os.write(reinterpret_cast<const char*>(levels.data()), static_cast<std::streamsize>(levels.size()));
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

Tensor read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  std::vector<double> data;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t count = 0;
    std::size_t start = 0;
    while (start <= line.size()) {
      const std::size_t comma = std::min(line.find(',', start), line.size());
      double v = 0.0;
      const auto res = std::from_chars(line.data() + start, line.data() + comma, v);
      if (res.ec != std::errc() || res.ptr != line.data() + comma) {
        throw ParseError("'" + path.string() + "' line " + std::to_string(rows + 1) + ": bad number");
      }
      data.push_back(v);
      ++count;
      start = comma + 1;
    }
    if (rows == 0) cols = count;
    if (count != cols) throw ParseError("'" + path.string() + "': ragged rows");
    ++rows;
  }
  if (rows == 0) throw ParseError("'" + path.string() + "' is empty");
  return Tensor({rows, cols}, std::move(data));
}

}  // namespace pfsa
