#include "cct/model.hpp"

#include <cmath>

#include "cct/errors.hpp"
#include "cct/ops.hpp"
#include "cct/random.hpp"

namespace cct {

// ---------------------------------------------------------------------------
// ModelConfig

std::int64_t ModelConfig::grid_size() const {
  std::int64_t side = img_size;
  for (std::int64_t b = 0; b < conv_blocks; ++b) {
    side = ops::conv_output_size(side, conv_kernel, 1, conv_kernel / 2);
    side = ops::pool_output_size(side, pool_kernel, pool_stride, pool_pad);
  }
  return side;
}

std::int64_t ModelConfig::ctx_len() const {
  const std::int64_t side = grid_size();
  return side * side;
}

AttentionConfig ModelConfig::attention_config() const {
  AttentionConfig a;
  a.kind = attention;
  a.d_model = d_model;
  a.n_heads = n_heads;
  a.ctx_len = ctx_len();
  a.use_bias = attention_bias;
  a.mixing_scope = mixing_scope;
  a.mixing_norm = mixing_norm;
  return a;
}

void ModelConfig::validate() const {
  auto positive = [](std::int64_t v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(img_size, "img_size");
  positive(in_channels, "in_channels");
  positive(n_classes, "n_classes");
  positive(d_model, "d_model");
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(mlp_ratio, "mlp_ratio");
  positive(conv_blocks, "conv_blocks");
  positive(conv_kernel, "conv_kernel");
  positive(pool_kernel, "pool_kernel");
  positive(pool_stride, "pool_stride");
  if (conv_kernel % 2 == 0) throw ConfigError("model config: conv_kernel must be odd");
  if (d_model % n_heads != 0) {
    throw ConfigError("model config: d_model " + std::to_string(d_model) +
                      " is not divisible by n_heads " + std::to_string(n_heads));
  }
  std::int64_t reduction = 1;
  for (std::int64_t b = 0; b < conv_blocks; ++b) reduction *= pool_stride;
  if (img_size % reduction != 0 || grid_size() != img_size / reduction) {
    throw ConfigError("model config: img_size " + std::to_string(img_size) +
                      " is not reduced to an integer grid by " + std::to_string(conv_blocks) +
                      " pooling stage(s) of stride " + std::to_string(pool_stride));
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("model config: dropout_p must lie in [0, 1)");
  if (!(layernorm_eps > 0.0)) throw ConfigError("model config: layernorm_eps must be positive");
}

// ---------------------------------------------------------------------------
// ParameterSet

template <typename T>
void ParameterSet<T>::insert(std::string name, Tensor<T> tensor) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

template <typename T>
const Tensor<T>& ParameterSet<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
Tensor<T>& ParameterSet<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
Tensor<T> ParameterSet<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? Tensor<T>{} : entries_[it->second].second;
}

template <typename T>
std::int64_t ParameterSet<T>::numel() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

template <typename T>
std::vector<std::string> ParameterSet<T>::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(name);
  return out;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

// ---------------------------------------------------------------------------
// layout and initialization

std::vector<std::pair<std::string, Shape>> canonical_param_layout(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> out;
  const std::int64_t d = cfg.d_model, k = cfg.conv_kernel, hidden = cfg.mlp_ratio * d;
  for (std::int64_t b = 0; b < cfg.conv_blocks; ++b) {
    const std::string prefix = "tokenizer.conv" + std::to_string(b);
    const std::int64_t cin = b == 0 ? cfg.in_channels : d;
    out.emplace_back(prefix + ".w", Shape{d, cin, k, k});
    out.emplace_back(prefix + ".b", Shape{d});
  }
  const AttentionConfig acfg = cfg.attention_config();
  const std::int64_t L = acfg.ctx_len;
  for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    out.emplace_back(prefix + ".ln1.gamma", Shape{d});
    out.emplace_back(prefix + ".ln1.beta", Shape{d});
    const bool sdpa = acfg.kind == AttentionKind::kSdpa;
    out.emplace_back(prefix + ".attn.w_q", Shape{d, d});
    out.emplace_back(prefix + ".attn.w_k", Shape{d, d});
    if (sdpa) {
      out.emplace_back(prefix + ".attn.w_v", Shape{d, d});
    } else if (acfg.mixing_scope == MixingScope::kPerHead) {
      out.emplace_back(prefix + ".attn.w_a", Shape{acfg.n_heads, L, L});
    } else {
      out.emplace_back(prefix + ".attn.w_a", Shape{L, L});
    }
    out.emplace_back(prefix + ".attn.w_o", Shape{d, d});
    if (acfg.use_bias) {
      out.emplace_back(prefix + ".attn.b_q", Shape{d});
      out.emplace_back(prefix + ".attn.b_k", Shape{d});
      if (sdpa) out.emplace_back(prefix + ".attn.b_v", Shape{d});
      out.emplace_back(prefix + ".attn.b_o", Shape{d});
    }
    out.emplace_back(prefix + ".ln2.gamma", Shape{d});
    out.emplace_back(prefix + ".ln2.beta", Shape{d});
    out.emplace_back(prefix + ".mlp.fc1.w", Shape{d, hidden});
    out.emplace_back(prefix + ".mlp.fc1.b", Shape{hidden});
    out.emplace_back(prefix + ".mlp.fc2.w", Shape{hidden, d});
    out.emplace_back(prefix + ".mlp.fc2.b", Shape{d});
  }
  out.emplace_back("final_ln.gamma", Shape{d});
  out.emplace_back("final_ln.beta", Shape{d});
  out.emplace_back("seqpool.g", Shape{d});
  out.emplace_back("head.w", Shape{d, cfg.n_classes});
  out.emplace_back("head.b", Shape{cfg.n_classes});
  return out;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, std::string_view prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

template <typename T>
std::vector<T> init_values(const std::string& name, const Shape& shape, Rng& rng) {
  const auto n = static_cast<std::size_t>(numel(shape));
  std::vector<T> v(n, T(0));
  auto fill_uniform = [&](double bound) {
    for (T& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  };
  if (ends_with(name, ".gamma")) {
    std::fill(v.begin(), v.end(), T(1));
  } else if (ends_with(name, ".attn.w_a")) {
    const std::int64_t L = shape.back();
    const std::int64_t copies = numel(shape) / (L * L);
    for (std::int64_t h = 0; h < copies; ++h)
      for (std::int64_t i = 0; i < L; ++i) v[static_cast<std::size_t>((h * L + i) * L + i)] = T(1);
  } else if (starts_with(name, "tokenizer.") && ends_with(name, ".w")) {
    const std::int64_t fan_in = shape[1] * shape[2] * shape[3];
    fill_uniform(std::sqrt(6.0 / static_cast<double>(fan_in)));
  } else if (shape.size() == 2) {
    fill_uniform(std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1])));
  }
  // Biases, betas and the pooling vector stay zero.
  return v;
}

}  // namespace

template <typename T>
ParameterSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParameterSet<T> params;
  for (auto& [name, shape] : canonical_param_layout(cfg)) {
    Rng rng(derive_seed(seed, hash_name(name)));
    auto values = init_values<T>(name, shape, rng);
    params.insert(name, Tensor<T>(shape, std::move(values), true));
  }
  return params;
}

// ---------------------------------------------------------------------------
// forward pieces

template <typename T>
Tensor<T> tokenize(const Tensor<T>& images, const ParameterSet<T>& params, const ModelConfig& cfg) {
  if (images.rank() != 4 || images.dim(1) != cfg.in_channels || images.dim(2) != cfg.img_size ||
      images.dim(3) != cfg.img_size) {
    throw ShapeError("tokenize: images " + to_string(images.shape()) + " do not match [B, " +
                     std::to_string(cfg.in_channels) + ", " + std::to_string(cfg.img_size) + ", " +
                     std::to_string(cfg.img_size) + "]");
  }
  Tensor<T> h = images;
  for (std::int64_t b = 0; b < cfg.conv_blocks; ++b) {
    const std::string prefix = "tokenizer.conv" + std::to_string(b);
    h = ops::conv2d(h, params.at(prefix + ".w"), params.at(prefix + ".b"), 1, cfg.conv_kernel / 2);
    h = ops::relu(h);
    h = ops::maxpool2d(h, cfg.pool_kernel, cfg.pool_stride, cfg.pool_pad);
  }
  return ops::spatial_to_tokens(h);
}

template <typename T>
AttentionParams<T> layer_attention(const ParameterSet<T>& params, std::int64_t layer) {
  const std::string prefix = "layer" + std::to_string(layer) + ".attn.";
  AttentionParams<T> p;
  p.w_q = params.find(prefix + "w_q");
  p.w_k = params.find(prefix + "w_k");
  p.w_v = params.find(prefix + "w_v");
  p.w_a = params.find(prefix + "w_a");
  p.w_o = params.find(prefix + "w_o");
  p.b_q = params.find(prefix + "b_q");
  p.b_k = params.find(prefix + "b_k");
  p.b_v = params.find(prefix + "b_v");
  p.b_o = params.find(prefix + "b_o");
  return p;
}

template <typename T>
Tensor<T> encoder_block(const Tensor<T>& x, const ParameterSet<T>& params, const ModelConfig& cfg,
                        std::int64_t layer, bool training, std::uint64_t dropout_seed) {
  if (x.rank() != 3 || x.dim(2) != cfg.d_model) {
    throw ShapeError("encoder_block: input " + to_string(x.shape()) + " does not match d_model " +
                     std::to_string(cfg.d_model));
  }
  const std::string prefix = "layer" + std::to_string(layer);
  const T eps = static_cast<T>(cfg.layernorm_eps);
  const auto seed = [&](std::uint64_t site) {
    return derive_seed(dropout_seed, static_cast<std::uint64_t>(layer), site);
  };

  auto h = ops::layernorm(x, params.at(prefix + ".ln1.gamma"), params.at(prefix + ".ln1.beta"), eps);
  h = attention_forward(h, layer_attention(params, layer), cfg.attention_config());
  h = ops::dropout(h, cfg.dropout_p, training, seed(0));
  const auto y = ops::add(x, h);

  auto m = ops::layernorm(y, params.at(prefix + ".ln2.gamma"), params.at(prefix + ".ln2.beta"), eps);
  m = ops::linear(m, params.at(prefix + ".mlp.fc1.w"), params.at(prefix + ".mlp.fc1.b"));
  m = ops::gelu(m);
  m = ops::linear(m, params.at(prefix + ".mlp.fc2.w"), params.at(prefix + ".mlp.fc2.b"));
  m = ops::dropout(m, cfg.dropout_p, training, seed(1));
  return ops::add(y, m);
}

template <typename T>
Tensor<T> seq_pool(const Tensor<T>& x, const Tensor<T>& g) {
  if (x.rank() != 3 || g.shape() != Shape{x.dim(2)}) {
    throw ShapeError("seq_pool: tokens " + to_string(x.shape()) + " and pooling vector " +
                     to_string(g.shape()) + " disagree");
  }
  const std::int64_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  auto scores = ops::matmul(x, ops::reshape(g, Shape{d, 1}));        // [B, L, 1]
  auto weights = ops::softmax_rows(ops::reshape(scores, Shape{B, 1, L}));
  return ops::reshape(ops::matmul(weights, x), Shape{B, d});
}

template <typename T>
Tensor<T> forward_tokens(const Tensor<T>& tokens, const ParameterSet<T>& params,
                         const ModelConfig& cfg, bool training, std::uint64_t dropout_seed) {
  Tensor<T> h = tokens;
  for (std::int64_t l = 0; l < cfg.n_layers; ++l) h = encoder_block(h, params, cfg, l, training, dropout_seed);
  h = ops::layernorm(h, params.at("final_ln.gamma"), params.at("final_ln.beta"),
                     static_cast<T>(cfg.layernorm_eps));
  h = seq_pool(h, params.at("seqpool.g"));
  return ops::linear(h, params.at("head.w"), params.at("head.b"));
}

template <typename T>
Tensor<T> forward(const Tensor<T>& images, const ParameterSet<T>& params, const ModelConfig& cfg,
                  bool training, std::uint64_t dropout_seed) {
  return forward_tokens(tokenize(images, params, cfg), params, cfg, training, dropout_seed);
}

ParamBreakdown model_param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t d = cfg.d_model, k = cfg.conv_kernel, hidden = cfg.mlp_ratio * d;
  ParamBreakdown p;
  p.tokenizer = cfg.in_channels * k * k * d + d + (cfg.conv_blocks - 1) * (d * k * k * d + d);
  p.per_layer_attention = attention_param_count(cfg.attention_config());
  p.per_layer_mlp = d * hidden + hidden + hidden * d + d;
  p.norms = (4 * cfg.n_layers + 2) * d;
  p.seqpool = d;
  p.head = d * cfg.n_classes + cfg.n_classes;
  p.total = p.tokenizer + cfg.n_layers * (p.per_layer_attention + p.per_layer_mlp) + p.norms +
            p.seqpool + p.head;
  return p;
}

#define CCT_INSTANTIATE_MODEL(T)                                                                  \
  template class ParameterSet<T>;                                                                 \
  template ParameterSet<T> init_params<T>(const ModelConfig&, std::uint64_t);                     \
  template Tensor<T> tokenize(const Tensor<T>&, const ParameterSet<T>&, const ModelConfig&);      \
  template AttentionParams<T> layer_attention(const ParameterSet<T>&, std::int64_t);              \
  template Tensor<T> encoder_block(const Tensor<T>&, const ParameterSet<T>&, const ModelConfig&,  \
                                   std::int64_t, bool, std::uint64_t);                            \
  template Tensor<T> seq_pool(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> forward_tokens(const Tensor<T>&, const ParameterSet<T>&, const ModelConfig&, \
                                    bool, std::uint64_t);                                         \
  template Tensor<T> forward(const Tensor<T>&, const ParameterSet<T>&, const ModelConfig&, bool,  \
                             std::uint64_t);

CCT_INSTANTIATE_MODEL(float)
CCT_INSTANTIATE_MODEL(double)

#undef CCT_INSTANTIATE_MODEL

}  // namespace cct
