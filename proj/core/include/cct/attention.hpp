#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cct/random.hpp"
#include "cct/tensor.hpp"

namespace cct {

enum class AttentionKind { kSdpa, kSuper };

// How the token-mixing matrix of super attention is shared and constrained.
enum class MixingScope { kShared, kPerHead };
enum class MixingNorm { kNone, kSoftmax };

std::string_view to_string(AttentionKind kind);
std::string_view to_string(MixingScope scope);
std::string_view to_string(MixingNorm norm);
AttentionKind parse_attention_kind(std::string_view name);
MixingScope parse_mixing_scope(std::string_view name);
MixingNorm parse_mixing_norm(std::string_view name);

struct AttentionConfig {
  AttentionKind kind = AttentionKind::kSuper;
  std::int64_t d_model = 256;
  std::int64_t n_heads = 4;
  std::int64_t ctx_len = 256;
  bool use_bias = false;
  MixingScope mixing_scope = MixingScope::kShared;
  MixingNorm mixing_norm = MixingNorm::kNone;

  std::int64_t head_dim() const { return d_model / n_heads; }
  // Throws ConfigError on an inconsistent record.
  void validate() const;
};

// Weights of one attention layer. SDPA holds w_v; super attention holds the
// token-mixing matrix w_a ([L, L], or [H, L, L] per head) instead.
// Projections are [d_in, d_out], applied as x * W.
template <typename T>
struct AttentionParams {
  Tensor<T> w_q, w_k, w_v, w_o, w_a;
  Tensor<T> b_q, b_k, b_v, b_o;

  // Defined tensors with their local names ("w_q", ...), in canonical order.
  std::vector<std::pair<std::string, Tensor<T>>> named() const;
  std::int64_t numel() const;
};

// Xavier-uniform projections, zero biases, identity mixing matrix.
template <typename T>
AttentionParams<T> init_attention_params(const AttentionConfig& cfg, Rng& rng);

// x: [B, L, d] -> [B, L, d]
template <typename T>
Tensor<T> sdpa_forward(const Tensor<T>& x, const AttentionParams<T>& p,
                       const AttentionConfig& cfg);
template <typename T>
Tensor<T> super_forward(const Tensor<T>& x, const AttentionParams<T>& p,
                        const AttentionConfig& cfg);
// Dispatches on cfg.kind.
template <typename T>
Tensor<T> attention_forward(const Tensor<T>& x, const AttentionParams<T>& p,
                            const AttentionConfig& cfg);

// Post-softmax score matrices, [B, H, L, L].
template <typename T>
Tensor<T> attention_scores(const Tensor<T>& x, const AttentionParams<T>& p,
                           const AttentionConfig& cfg);

std::int64_t attention_param_count(const AttentionConfig& cfg);

// Multiply-add counted (2 per MAC) cost of one attention layer applied to an
// L x d token matrix.
struct FlopsBreakdown {
  std::int64_t q_proj = 0;
  std::int64_t k_proj = 0;
  std::int64_t v_proj = 0;        // SDPA only
  std::int64_t token_mixing = 0;  // super only
  std::int64_t scores = 0;
  std::int64_t weighted_values = 0;
  std::int64_t out_proj = 0;

  std::int64_t total() const {
    return q_proj + k_proj + v_proj + token_mixing + scores + weighted_values + out_proj;
  }
};

FlopsBreakdown attention_flops(const AttentionConfig& cfg);

}  // namespace cct
