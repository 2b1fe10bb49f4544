#include "pfsa/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>
#include <tuple>

#include "pfsa/errors.hpp"

namespace pfsa {

std::string_view split_name(Split split) noexcept {
  switch (split) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "unknown";
}

void ToySpec::validate() const {
  if (num_cameras < 2) throw ConfigError("toy dataset needs at least 2 cameras");
  if (num_identities == 0) throw ConfigError("toy dataset needs at least one identity");
  if (num_train_identities == 0 || num_train_identities > num_identities) {
    throw ConfigError("num_train_identities must be in [1, num_identities]");
  }
  if (images_per_identity_per_camera == 0) throw ConfigError("images_per_identity_per_camera must be positive");
  if (num_train_identities < num_identities && images_per_identity_per_camera < 2) {
    throw ConfigError("held-out identities need at least 2 images per camera (one query, one gallery)");
  }
  if (image_height < kToyZones || image_width < 2) {
    throw ConfigError("toy images must be at least " + std::to_string(kToyZones) + " rows by 2 columns");
  }
  if (occlusion_zone >= kToyZones) {
    throw ConfigError("occlusion_zone " + std::to_string(occlusion_zone) + " lies outside the " +
                      std::to_string(kToyZones) + " body zones");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  if (!(hue_shift >= 0.0) || hue_shift * static_cast<double>(num_cameras - 1) > 1.0) {
    throw ConfigError("hue_shift must be in [0, 1/(num_cameras-1)]");
  }
}

ZoneRows toy_zone_rows(std::size_t image_height, std::size_t zone) {
  return {zone * image_height / kToyZones, (zone + 1) * image_height / kToyZones};
}

namespace {

enum class PatchShape { rectangle, ellipse, diamond };

struct Patch {
  PatchShape shape = PatchShape::rectangle;
  double color[3] = {0, 0, 0};
  double width_fraction = 0.6;
};

constexpr double kPalette[4][3] = {{0.85, 0.25, 0.25}, {0.25, 0.75, 0.3}, {0.3, 0.35, 0.85}, {0.85, 0.8, 0.3}};

std::vector<Patch> identity_patches(const ToySpec& spec, int identity) {
  std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(identity), std::uint64_t{0xA11CE}};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<int> shape_dist(0, 2);
  std::uniform_int_distribution<int> palette_dist(0, 3);
  std::uniform_real_distribution<double> channel(0.2, 1.0);
  std::uniform_real_distribution<double> width(0.6, 0.95);
  std::vector<Patch> patches(kToyZones);
  for (std::size_t z = 0; z < kToyZones; ++z) {
    Patch& p = patches[z];
    p.shape = static_cast<PatchShape>(shape_dist(rng));
    if (z == spec.occlusion_zone) {
      // The occluded zone carries the most identity information: free colour and width.
      for (double& c : p.color) c = channel(rng);
      p.width_fraction = width(rng);
    } else {
      const auto& pal = kPalette[palette_dist(rng)];
      std::copy(std::begin(pal), std::end(pal), p.color);
      p.width_fraction = palette_dist(rng) < 2 ? 0.45 : 0.75;
    }
  }
  return patches;
}

bool inside_patch(const Patch& p, double y, double x, double cy, double cx, double ry, double rx) {
  const double dy = std::abs(y - cy) / ry;
  const double dx = std::abs(x - cx) / rx;
  switch (p.shape) {
    case PatchShape::rectangle: return dy <= 1.0 && dx <= 1.0;
    case PatchShape::ellipse: return dy * dy + dx * dx <= 1.0;
    case PatchShape::diamond: return dy + dx <= 1.0;
  }
  return false;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

Tensor render_identity(const ToySpec& spec, int identity) {
  const std::size_t h = spec.image_height, w = spec.image_width;
  Tensor img({3, h, w}, kToyBackground);
  const auto patches = identity_patches(spec, identity);
  for (std::size_t z = 0; z < kToyZones; ++z) {
    const auto [r0, r1] = toy_zone_rows(h, z);
    const Patch& p = patches[z];
    const double cy = 0.5 * static_cast<double>(r0 + r1);
    const double ry = 0.4 * static_cast<double>(r1 - r0);
    const double cx = 0.5 * static_cast<double>(w);
    const double rx = 0.5 * p.width_fraction * static_cast<double>(w);
    for (std::size_t i = r0; i < r1; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        if (!inside_patch(p, static_cast<double>(i) + 0.5, static_cast<double>(j) + 0.5, cy, cx, ry, rx)) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) img(ch, i, j) = p.color[ch];
      }
    }
  }
  return img;
}

Tensor apply_camera_tint(const Tensor& image, int camera, double hue_shift) {
  const double a = static_cast<double>(camera) * hue_shift;
  if (a == 0.0) return image;
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double rotated = image((ch + 1) % 3, i, j);
        out(ch, i, j) = std::clamp((1.0 - a) * image(ch, i, j) + a * rotated, 0.0, 1.0);
      }
    }
  }
  return out;
}

std::vector<Sample> generate_toy(const ToySpec& spec) {
  spec.validate();
  std::vector<Sample> samples;
  for (std::size_t id = 0; id < spec.num_identities; ++id) {
    const int identity = static_cast<int>(id);
    const Tensor clean = render_identity(spec, identity);
    for (std::size_t cam = 0; cam < spec.num_cameras; ++cam) {
      Tensor view = clean;
      if (cam == 1) {
        const auto [r0, r1] = toy_zone_rows(spec.image_height, spec.occlusion_zone);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          for (std::size_t i = r0; i < r1; ++i) {
            for (std::size_t j = 0; j < spec.image_width; ++j) view(ch, i, j) = kToyBackground;
          }
        }
      }
      view = apply_camera_tint(view, static_cast<int>(cam), spec.hue_shift);
      for (std::size_t n = 0; n < spec.images_per_identity_per_camera; ++n) {
        Sample s;
        s.identity = identity;
        s.camera = static_cast<int>(cam);
        s.index = static_cast<int>(n);
        s.split = id < spec.num_train_identities ? Split::train : (n == 0 ? Split::query : Split::gallery);
        s.image = view;
        if (spec.noise_std > 0.0) {
          std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(cam),
                            static_cast<std::uint64_t>(n), std::uint64_t{0x9015E}};
          std::mt19937_64 rng(seq);
          std::normal_distribution<double> noise(0.0, spec.noise_std);
          for (auto& v : s.image.data()) v = std::clamp(v + noise(rng), 0.0, 1.0);
        }
        samples.push_back(std::move(s));
      }
    }
  }
  return samples;
}

std::vector<Sample> select_split(std::span<const Sample> samples, Split split) {
  std::vector<Sample> out;
  for (const auto& s : samples) {
    if (s.split == split) out.push_back(s);
  }
  return out;
}

void write_ppm(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("write_ppm: expected a 3xHxW image, got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> bytes;
  bytes.reserve(3 * h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t ch = 0; ch < 3; ++ch) bytes.push_back(to_byte(image(ch, i, j)));
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << "P6\n" << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

namespace {

/// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& is, const std::filesystem::path& path) {
  std::string token;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  if (token.empty()) throw ParseError("'" + path.string() + "': truncated PPM header");
  return token;
}

std::size_t header_number(std::istream& is, const std::filesystem::path& path) {
  const std::string token = header_token(is, path);
  std::size_t v = 0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size() || v == 0) {
    throw ParseError("'" + path.string() + "': bad PPM header field '" + token + "'");
  }
  return v;
}

}  // namespace

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  if (header_token(is, path) != "P6") throw ParseError("'" + path.string() + "': not a binary PPM (P6)");
  const std::size_t w = header_number(is, path);
  const std::size_t h = header_number(is, path);
  const std::size_t maxval = header_number(is, path);
  if (maxval != 255) throw ParseError("'" + path.string() + "': only 8-bit PPM (maxval 255) is supported");
  std::vector<std::uint8_t> bytes(3 * h * w);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(is.gcount()) != bytes.size()) {
    throw ParseError("'" + path.string() + "': truncated pixel data");
  }
  Tensor img({3, h, w});
  std::size_t n = 0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t ch = 0; ch < 3; ++ch) img(ch, i, j) = static_cast<double>(bytes[n++]) / 255.0;
    }
  }
  return img;
}

ParsedName parse_sample_name(std::string_view filename) {
  const auto fail = [&]() -> ParseError {
    return ParseError("malformed sample file name '" + std::string(filename) +
                      "' (expected id_<identity>_cam_<camera>_<n>.ppm)");
  };
  std::string_view rest = filename;
  const auto expect = [&](std::string_view prefix) {
    if (!rest.starts_with(prefix)) throw fail();
    rest.remove_prefix(prefix.size());
  };
  const auto number = [&]() {
    int v = 0;
    const auto res = std::from_chars(rest.data(), rest.data() + rest.size(), v);
    if (res.ec != std::errc() || v < 0) throw fail();
    rest.remove_prefix(static_cast<std::size_t>(res.ptr - rest.data()));
    return v;
  };
  ParsedName parsed;
  expect("id_");
  parsed.identity = number();
  expect("_cam_");
  parsed.camera = number();
  expect("_");
  parsed.index = number();
  if (rest != ".ppm") throw fail();
  return parsed;
}

void export_dir(std::span<const Sample> samples, const std::filesystem::path& root) {
  std::error_code ec;
  for (Split split : {Split::train, Split::query, Split::gallery}) {
    std::filesystem::create_directories(root / split_name(split), ec);
    if (ec) throw IoError("cannot create '" + (root / split_name(split)).string() + "': " + ec.message());
  }
  for (const auto& s : samples) {
    const std::string name = "id_" + std::to_string(s.identity) + "_cam_" + std::to_string(s.camera) + "_" +
                             std::to_string(s.index) + ".ppm";
    write_ppm(s.image, root / split_name(s.split) / name);
  }
}

std::vector<Sample> load_dir(const std::filesystem::path& root) {
  std::vector<Sample> all;
  for (Split split : {Split::train, Split::query, Split::gallery}) {
    const auto dir = root / split_name(split);
    if (!std::filesystem::is_directory(dir)) throw IoError("missing split directory '" + dir.string() + "'");
    std::vector<Sample> part;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".ppm") continue;
      const auto name = parse_sample_name(entry.path().filename().string());
      Sample s;
      s.image = read_ppm(entry.path());
      s.identity = name.identity;
      s.camera = name.camera;
      s.index = name.index;
      s.split = split;
      part.push_back(std::move(s));
    }
    if (part.empty()) throw ParseError("split directory '" + dir.string() + "' contains no images");
    std::sort(part.begin(), part.end(), [](const Sample& a, const Sample& b) {
      return std::tie(a.identity, a.camera, a.index) < std::tie(b.identity, b.camera, b.index);
    });
    std::move(part.begin(), part.end(), std::back_inserter(all));
  }
  return all;
}

Tensor horizontal_flip(const Tensor& image) {
  require_rank(image, 3, "horizontal_flip");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) out(ch, i, j) = image(ch, i, w - 1 - j);
    }
  }
  return out;
}

Tensor augment(const Tensor& image, std::mt19937_64& rng, const AugmentOptions& options) {
  require_rank(image, 3, "augment");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor out = unit(rng) < options.flip_probability ? horizontal_flip(image) : image;
  if (!(unit(rng) < options.erase_probability)) return out;

  const std::size_t c = out.dim(0), h = out.dim(1), w = out.dim(2);
  const double total = static_cast<double>(h * w);
  std::uniform_real_distribution<double> area_dist(options.erase_area_min, options.erase_area_max);
  std::uniform_real_distribution<double> aspect_dist(options.erase_aspect_min, options.erase_aspect_max);
  for (int attempt = 0; attempt < options.erase_attempts; ++attempt) {
    const double area = area_dist(rng) * total;
    const double aspect = aspect_dist(rng);
    const auto eh = static_cast<std::size_t>(std::lround(std::sqrt(area * aspect)));
    const auto ew = static_cast<std::size_t>(std::lround(std::sqrt(area / aspect)));
    if (eh == 0 || ew == 0 || eh >= h || ew >= w) continue;
    const double ratio = static_cast<double>(eh * ew) / total;
    if (ratio < options.erase_area_min || ratio > options.erase_area_max) continue;
    std::uniform_int_distribution<std::size_t> top_dist(0, h - eh);
    std::uniform_int_distribution<std::size_t> left_dist(0, w - ew);
    const std::size_t top = top_dist(rng), left = left_dist(rng);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = top; i < top + eh; ++i) {
        for (std::size_t j = left; j < left + ew; ++j) out(ch, i, j) = unit(rng);
      }
    }
    break;
  }
  return out;
}

}  // namespace pfsa
