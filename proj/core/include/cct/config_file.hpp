#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cct/model.hpp"
#include "cct/optimizer.hpp"

namespace cct {

// Flat "key = value" text with '#' comments. Keys are kept sorted so
// serialization is canonical.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  std::string serialize() const;

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void set(const std::string& key, std::int64_t value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, double value);
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }
  void erase(const std::string& key) { values_.erase(key); }

  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Keys understood by model_config_from / adamw_hyper_from.
const std::vector<std::string>& model_config_keys();
const std::vector<std::string>& adamw_hyper_keys();

// Overrides fields of `base` with any model keys present in `kv`.
ModelConfig model_config_from(const KeyValueConfig& kv, ModelConfig base = {});
AdamWHyper adamw_hyper_from(const KeyValueConfig& kv, AdamWHyper base = {});
void put_model_config(KeyValueConfig& kv, const ModelConfig& cfg);
void put_adamw_hyper(KeyValueConfig& kv, const AdamWHyper& hp);

}  // namespace cct
