#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cct/attention.hpp"
#include "cct/tensor.hpp"

namespace cct {

// Architectural hyperparameters of a compact convolutional transformer.
// Defaults describe CCT-6/3x1 on 32x32 RGB input.
struct ModelConfig {
  std::int64_t img_size = 32;
  std::int64_t in_channels = 3;
  std::int64_t n_classes = 100;
  std::int64_t d_model = 256;
  std::int64_t n_layers = 6;
  std::int64_t n_heads = 4;
  std::int64_t mlp_ratio = 2;
  std::int64_t conv_blocks = 1;
  std::int64_t conv_kernel = 3;
  std::int64_t pool_kernel = 3;
  std::int64_t pool_stride = 2;
  std::int64_t pool_pad = 1;
  AttentionKind attention = AttentionKind::kSuper;
  MixingScope mixing_scope = MixingScope::kShared;
  MixingNorm mixing_norm = MixingNorm::kNone;
  bool attention_bias = false;
  double dropout_p = 0.0;
  double layernorm_eps = 1e-5;
  std::uint64_t seed = 0;

  // Number of tokens after the convolutional tokenizer.
  std::int64_t ctx_len() const;
  // Side length of the pooled feature map.
  std::int64_t grid_size() const;
  AttentionConfig attention_config() const;
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Named parameters in deterministic (insertion) order. Names follow the
// scheme "tokenizer.conv0.w", "layer3.attn.w_a", "seqpool.g", "head.w".
template <typename T>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  void insert(std::string name, Tensor<T> tensor);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& at(const std::string& name);
  // Undefined tensor when absent.
  Tensor<T> find(const std::string& name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  std::int64_t numel() const;
  std::vector<std::string> names() const;
  void zero_grad();

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Names and shapes of every parameter init_params creates, in order.
std::vector<std::pair<std::string, Shape>> canonical_param_layout(const ModelConfig& cfg);

// Kaiming-uniform (fan-in) convolutions, Xavier-uniform linears, unit
// layernorm gains, zero biases, zero pooling vector, identity mixing.
template <typename T>
ParameterSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

// [B, C, H, W] images -> [B, L, d] tokens. No positional embedding.
template <typename T>
Tensor<T> tokenize(const Tensor<T>& images, const ParameterSet<T>& params, const ModelConfig& cfg);

template <typename T>
AttentionParams<T> layer_attention(const ParameterSet<T>& params, std::int64_t layer);

// Pre-norm block: y = x + Attn(LN(x)); y + MLP(LN(y)).
template <typename T>
Tensor<T> encoder_block(const Tensor<T>& x, const ParameterSet<T>& params, const ModelConfig& cfg,
                        std::int64_t layer, bool training = false, std::uint64_t dropout_seed = 0);

// Softmax-weighted token average; x: [B, L, d], g: [d] -> [B, d].
template <typename T>
Tensor<T> seq_pool(const Tensor<T>& x, const Tensor<T>& g);

// Encoder stack, final norm, sequence pooling and head: [B, L, d] -> [B, classes].
template <typename T>
Tensor<T> forward_tokens(const Tensor<T>& tokens, const ParameterSet<T>& params,
                         const ModelConfig& cfg, bool training = false,
                         std::uint64_t dropout_seed = 0);

// Images -> logits.
template <typename T>
Tensor<T> forward(const Tensor<T>& images, const ParameterSet<T>& params, const ModelConfig& cfg,
                  bool training = false, std::uint64_t dropout_seed = 0);

struct ParamBreakdown {
  std::int64_t tokenizer = 0;
  std::int64_t per_layer_attention = 0;
  std::int64_t per_layer_mlp = 0;
  std::int64_t norms = 0;  // all layernorms, including the final one
  std::int64_t seqpool = 0;
  std::int64_t head = 0;
  std::int64_t total = 0;
};

ParamBreakdown model_param_count(const ModelConfig& cfg);

}  // namespace cct
