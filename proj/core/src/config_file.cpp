#include "cct/config_file.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cct/errors.hpp"

namespace cct {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.has(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv.values_[std::move(key)] = std::move(value);
  }
  return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string KeyValueConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

const std::string& KeyValueConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

void KeyValueConfig::set(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  values_[key] = buf;
}

std::int64_t KeyValueConfig::get_int(const std::string& key) const {
  const std::string& s = get(key);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not an integer");
  }
  return v;
}

std::uint64_t KeyValueConfig::get_uint(const std::string& key) const {
  const std::string& s = get(key);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not a non-negative integer");
  }
  return v;
}

double KeyValueConfig::get_double(const std::string& key) const {
  const std::string& s = get(key);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw ConfigError("config key '" + key + "': '" + s + "' is not a number");
  }
  return v;
}

bool KeyValueConfig::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + key + "': '" + s + "' is not a boolean");
}

const std::vector<std::string>& model_config_keys() {
  static const std::vector<std::string> keys{
      "img_size",    "in_channels", "n_classes",    "d_model",        "n_layers",
      "n_heads",     "mlp_ratio",   "conv_blocks",  "conv_kernel",    "pool_kernel",
      "pool_stride", "pool_pad",    "attention",    "mixing_scope",   "mixing_norm",
      "attention_bias", "dropout_p", "layernorm_eps", "seed"};
  return keys;
}

const std::vector<std::string>& adamw_hyper_keys() {
  static const std::vector<std::string> keys{"lr",  "beta1", "beta2", "eps", "weight_decay",
                                             "exempt_norms_and_biases"};
  return keys;
}

ModelConfig model_config_from(const KeyValueConfig& kv, ModelConfig c) {
  auto i64 = [&](const char* key, std::int64_t& field) {
    if (kv.has(key)) field = kv.get_int(key);
  };
  i64("img_size", c.img_size);
  i64("in_channels", c.in_channels);
  i64("n_classes", c.n_classes);
  i64("d_model", c.d_model);
  i64("n_layers", c.n_layers);
  i64("n_heads", c.n_heads);
  i64("mlp_ratio", c.mlp_ratio);
  i64("conv_blocks", c.conv_blocks);
  i64("conv_kernel", c.conv_kernel);
  i64("pool_kernel", c.pool_kernel);
  i64("pool_stride", c.pool_stride);
  i64("pool_pad", c.pool_pad);
  if (kv.has("attention")) c.attention = parse_attention_kind(kv.get("attention"));
  if (kv.has("mixing_scope")) c.mixing_scope = parse_mixing_scope(kv.get("mixing_scope"));
  if (kv.has("mixing_norm")) c.mixing_norm = parse_mixing_norm(kv.get("mixing_norm"));
  if (kv.has("attention_bias")) c.attention_bias = kv.get_bool("attention_bias");
  if (kv.has("dropout_p")) c.dropout_p = kv.get_double("dropout_p");
  if (kv.has("layernorm_eps")) c.layernorm_eps = kv.get_double("layernorm_eps");
  if (kv.has("seed")) c.seed = kv.get_uint("seed");
  return c;
}

AdamWHyper adamw_hyper_from(const KeyValueConfig& kv, AdamWHyper h) {
  if (kv.has("lr")) h.lr = kv.get_double("lr");
  if (kv.has("beta1")) h.beta1 = kv.get_double("beta1");
  if (kv.has("beta2")) h.beta2 = kv.get_double("beta2");
  if (kv.has("eps")) h.eps = kv.get_double("eps");
  if (kv.has("weight_decay")) h.weight_decay = kv.get_double("weight_decay");
  if (kv.has("exempt_norms_and_biases")) h.exempt_norms_and_biases = kv.get_bool("exempt_norms_and_biases");
  return h;
}

void put_model_config(KeyValueConfig& kv, const ModelConfig& c) {
  kv.set("img_size", c.img_size);
  kv.set("in_channels", c.in_channels);
  kv.set("n_classes", c.n_classes);
  kv.set("d_model", c.d_model);
  kv.set("n_layers", c.n_layers);
  kv.set("n_heads", c.n_heads);
  kv.set("mlp_ratio", c.mlp_ratio);
  kv.set("conv_blocks", c.conv_blocks);
  kv.set("conv_kernel", c.conv_kernel);
  kv.set("pool_kernel", c.pool_kernel);
  kv.set("pool_stride", c.pool_stride);
  kv.set("pool_pad", c.pool_pad);
  kv.set("attention", std::string(to_string(c.attention)));
  kv.set("mixing_scope", std::string(to_string(c.mixing_scope)));
  kv.set("mixing_norm", std::string(to_string(c.mixing_norm)));
  kv.set("attention_bias", c.attention_bias);
  kv.set("dropout_p", c.dropout_p);
  kv.set("layernorm_eps", c.layernorm_eps);
  kv.set("seed", std::to_string(c.seed));
}

void put_adamw_hyper(KeyValueConfig& kv, const AdamWHyper& h) {
  kv.set("lr", h.lr);
  kv.set("beta1", h.beta1);
  kv.set("beta2", h.beta2);
  kv.set("eps", h.eps);
  kv.set("weight_decay", h.weight_decay);
  kv.set("exempt_norms_and_biases", h.exempt_norms_and_biases);
}

}  // namespace cct
