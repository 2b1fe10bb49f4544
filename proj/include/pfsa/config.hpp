#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "pfsa/dataset.hpp"
#include "pfsa/model.hpp"

namespace pfsa {

/// Flat `key = value` text with `#` comments. Lookups record which keys were read so that
/// misspelt keys can be reported.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, std::string source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_size_list(const std::string& key, const std::vector<std::size_t>& fallback) const;

  /// Keys present in the file that no lookup has touched.
  std::vector<std::string> unused_keys() const;

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& why) const;

  std::map<std::string, std::string> values_;
  std::string source_;
  mutable std::set<std::string> consumed_;
};

/// Everything a CLI command needs, assembled from one key-value file.
struct RunConfig {
  ModelConfig model;
  ToySpec toy;
  TrainOptions training;
  bool infer_num_classes = true;  // num_classes = auto: count of distinct training identities
  std::size_t max_rank = 10;
  std::size_t gradcheck_trials = 100;
  std::filesystem::path data_dir;
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;

  /// Sets the model, generator and training seeds together.
  void apply_seed(std::uint64_t value);
};

/// Builds a RunConfig; ConfigError on unknown keys or invalid values.
RunConfig run_config_from(const KeyValueConfig& kv);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace pfsa
