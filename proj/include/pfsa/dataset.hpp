#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "pfsa/tensor.hpp"

namespace pfsa {

enum class Split { train, query, gallery };

std::string_view split_name(Split split) noexcept;

struct Sample {
  Tensor image;  // 3×H×W, values in [0,1]
  int identity = 0;
  int camera = 0;
  Split split = Split::train;
  int index = 0;  // per (identity, camera) image counter
};

/// Synthetic cross-camera re-identification set.
///
/// Every identity is four coloured shapes stacked in fixed horizontal body zones. Camera 1 blanks
/// `occlusion_zone`, and every camera c > 0 mixes a fraction c·hue_shift of the rotated colour
/// channels into each pixel. Identities [0, num_train_identities) are for training; the rest
/// contribute image 0 of each camera to the query split and the remaining images to the gallery.
struct ToySpec {
  std::size_t num_identities = 40;
  std::size_t num_train_identities = 20;
  std::size_t images_per_identity_per_camera = 4;
  std::size_t num_cameras = 2;
  std::size_t image_height = 64;
  std::size_t image_width = 32;
  double noise_std = 0.05;
  std::size_t occlusion_zone = 1;
  double hue_shift = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr std::size_t kToyZones = 4;
inline constexpr double kToyBackground = 0.15;

/// Rows [begin, end) of a body zone.
struct ZoneRows {
  std::size_t begin = 0;
  std::size_t end = 0;
};
ZoneRows toy_zone_rows(std::size_t image_height, std::size_t zone);

/// Camera colour cast: (1−a)·rgb + a·(g,b,r) with a = camera·hue_shift, clamped to [0,1].
Tensor apply_camera_tint(const Tensor& image, int camera, double hue_shift);

/// Noise-free rendering of one identity in camera A (no occlusion, no tint).
Tensor render_identity(const ToySpec& spec, int identity);

std::vector<Sample> generate_toy(const ToySpec& spec);

std::vector<Sample> select_split(std::span<const Sample> samples, Split split);

/// Writes `<root>/<split>/id_<identity>_cam_<camera>_<index>.ppm` for every sample.
void export_dir(std::span<const Sample> samples, const std::filesystem::path& root);

/// Reads a directory written by export_dir; samples come back ordered by split, identity,
/// camera and index.
std::vector<Sample> load_dir(const std::filesystem::path& root);

struct ParsedName {
  int identity = 0;
  int camera = 0;
  int index = 0;
};
/// Parses `id_<identity>_cam_<camera>_<n>.ppm`; ParseError otherwise.
ParsedName parse_sample_name(std::string_view filename);

void write_ppm(const Tensor& image, const std::filesystem::path& path);
Tensor read_ppm(const std::filesystem::path& path);

struct AugmentOptions {
  double flip_probability = 0.5;
  double erase_probability = 0.5;
  double erase_area_min = 0.02;
  double erase_area_max = 0.4;
  double erase_aspect_min = 0.3;
  double erase_aspect_max = 1.0 / 0.3;
  int erase_attempts = 100;
};

Tensor horizontal_flip(const Tensor& image);

/// Random horizontal flip followed by random erasing of one rectangle with uniform noise.
Tensor augment(const Tensor& image, std::mt19937_64& rng, const AugmentOptions& options = {});

}  // namespace pfsa
