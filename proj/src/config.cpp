#include "pfsa/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "pfsa/errors.hpp"

namespace pfsa {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, std::string source) {
  KeyValueConfig cfg;
  cfg.source_ = std::move(source);
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(cfg.source_ + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(cfg.source_ + ":" + std::to_string(line_no) + ": empty key");
    if (cfg.values_.contains(key)) {
      throw ConfigError(cfg.source_ + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    cfg.values_.emplace(key, value);
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

void KeyValueConfig::fail(const std::string& key, const std::string& why) const {
  throw ConfigError(source_ + ": key '" + key + "': " + why);
}

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  const auto parsed = parse_number<double>(*v);
  if (!parsed) fail(key, "expected a number, got '" + *v + "'");
  return *parsed;
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  const auto parsed = parse_number<std::size_t>(*v);
  if (!parsed) fail(key, "expected a non-negative integer, got '" + *v + "'");
  return *parsed;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  const auto parsed = parse_number<std::uint64_t>(*v);
  if (!parsed) fail(key, "expected a non-negative integer, got '" + *v + "'");
  return *parsed;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::string lower = *v;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "true" || lower == "1" || lower == "yes" || lower == "on") return true;
  if (lower == "false" || lower == "0" || lower == "no" || lower == "off") return false;
  fail(key, "expected a boolean, got '" + *v + "'");
}

std::vector<std::size_t> KeyValueConfig::get_size_list(const std::string& key,
                                                       const std::vector<std::size_t>& fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::vector<std::size_t> out;
  std::string_view rest = *v;
  while (true) {
    const auto comma = rest.find(',');
    const auto item = trim(rest.substr(0, comma));
    const auto parsed = parse_number<std::size_t>(item);
    if (!parsed) fail(key, "expected a comma-separated list of integers, got '" + *v + "'");
    out.push_back(*parsed);
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

std::vector<std::string> KeyValueConfig::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_) {
    if (!consumed_.contains(key)) out.push_back(key);
  }
  return out;
}

void RunConfig::apply_seed(std::uint64_t value) {
  seed = value;
  model.seed = value;
  toy.seed = value;
  training.seed = value;
}

namespace {

/// A list key holds either one value for every stage or one value per stage.
std::vector<std::size_t> per_stage(const KeyValueConfig& kv, const std::string& key, std::size_t stages,
                                   std::vector<std::size_t> fallback) {
  auto values = kv.get_size_list(key, fallback);
  if (values.size() == 1) values.assign(stages, values.front());
  if (values.size() != stages) {
    throw ConfigError("key '" + key + "' has " + std::to_string(values.size()) + " entries for " +
                      std::to_string(stages) + " stages");
  }
  return values;
}

}  // namespace

RunConfig run_config_from(const KeyValueConfig& kv) {
  RunConfig rc;
  const ModelConfig dm;
  const ToySpec dt;
  const TrainOptions train_defaults;

  rc.toy.num_identities = kv.get_size("num_identities", dt.num_identities);
  rc.toy.num_train_identities = kv.get_size("num_train_identities", rc.toy.num_identities / 2);
  rc.toy.images_per_identity_per_camera =
      kv.get_size("images_per_identity_per_camera", dt.images_per_identity_per_camera);
  rc.toy.num_cameras = kv.get_size("num_cameras", dt.num_cameras);
  rc.toy.image_height = kv.get_size("image_height", dt.image_height);
  rc.toy.image_width = kv.get_size("image_width", dt.image_width);
  rc.toy.noise_std = kv.get_double("noise_std", dt.noise_std);
  rc.toy.occlusion_zone = kv.get_size("occlusion_zone", dt.occlusion_zone);
  rc.toy.hue_shift = kv.get_double("hue_shift", dt.hue_shift);

  std::vector<std::size_t> default_channels;
  for (const auto& st : dm.stages) default_channels.push_back(st.out_channels);
  const auto channels = kv.get_size_list("stage_channels", default_channels);
  const std::size_t n = channels.size();
  std::vector<std::size_t> default_down;
  for (std::size_t s = 0; s < n; ++s) default_down.push_back(s + 1 < n ? 1 : 0);
  const auto kernels = per_stage(kv, "stage_kernels", n, {3});
  const auto strides = per_stage(kv, "stage_strides", n, {1});
  const auto pads = per_stage(kv, "stage_pads", n, {1});
  const auto down = per_stage(kv, "stage_downsample", n, default_down);
  rc.model.stages.clear();
  for (std::size_t s = 0; s < n; ++s) rc.model.stages.push_back({channels[s], kernels[s], strides[s], pads[s], down[s] != 0});

  rc.model.input_channels = 3;
  rc.model.input_height = rc.toy.image_height;
  rc.model.input_width = rc.toy.image_width;
  const std::string classes = kv.get_string("num_classes", "auto");
  if (classes == "auto") {
    rc.infer_num_classes = true;
    rc.model.num_classes = rc.toy.num_train_identities;
  } else {
    rc.infer_num_classes = false;
    rc.model.num_classes = kv.get_size("num_classes", 0);
  }
  rc.model.parts = kv.get_size("parts", dm.parts);
  rc.model.reduced_dim = kv.get_size("reduced_dim", dm.reduced_dim);
  rc.model.lambda = kv.get_double("lambda", dm.lambda);
  rc.model.sa_on_ds = kv.get_bool("sa_on_ds", dm.sa_on_ds);
  rc.model.sa_on_backbone = kv.get_bool("sa_on_backbone", dm.sa_on_backbone);

  rc.training.epochs = kv.get_size("epochs", train_defaults.epochs);
  rc.training.batch_size = kv.get_size("batch_size", train_defaults.batch_size);
  rc.training.lr = kv.get_double("lr", train_defaults.lr);
  rc.training.momentum = kv.get_double("momentum", train_defaults.momentum);
  rc.training.lr_drop_fraction = kv.get_double("lr_drop_fraction", train_defaults.lr_drop_fraction);
  rc.training.lr_decay = kv.get_double("lr_decay", train_defaults.lr_decay);
  rc.training.augment = kv.get_bool("augment", train_defaults.augment);

  rc.max_rank = kv.get_size("max_rank", rc.max_rank);
  rc.gradcheck_trials = kv.get_size("gradcheck_trials", rc.gradcheck_trials);
  rc.data_dir = kv.get_string("data_dir", "");
  rc.checkpoint = kv.get_string("checkpoint", "");
  rc.out_dir = kv.get_string("out_dir", "");
  rc.apply_seed(kv.get_u64("seed", 0));

  if (const auto unused = kv.unused_keys(); !unused.empty()) {
    std::string names;
    for (const auto& k : unused) names += (names.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config keys: " + names);
  }
  if (rc.training.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (rc.max_rank == 0) throw ConfigError("max_rank must be at least 1");
  rc.toy.validate();
  rc.model.validate();
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from(KeyValueConfig::load(path)); }

}  // namespace pfsa
