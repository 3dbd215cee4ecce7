#include "cct/attention.hpp"

#include <cmath>

#include "cct/errors.hpp"
#include "cct/ops.hpp"

namespace cct {

std::string_view to_string(AttentionKind kind) {
  return kind == AttentionKind::kSdpa ? "sdpa" : "super";
}
std::string_view to_string(MixingScope scope) {
  return scope == MixingScope::kShared ? "shared" : "per_head";
}
std::string_view to_string(MixingNorm norm) {
  return norm == MixingNorm::kNone ? "none" : "softmax";
}

AttentionKind parse_attention_kind(std::string_view name) {
  if (name == "sdpa") return AttentionKind::kSdpa;
  if (name == "super") return AttentionKind::kSuper;
  throw ConfigError("unknown attention kind '" + std::string(name) + "' (expected sdpa|super)");
}
MixingScope parse_mixing_scope(std::string_view name) {
  if (name == "shared") return MixingScope::kShared;
  if (name == "per_head") return MixingScope::kPerHead;
  throw ConfigError("unknown mixing scope '" + std::string(name) + "' (expected shared|per_head)");
}
MixingNorm parse_mixing_norm(std::string_view name) {
  if (name == "none") return MixingNorm::kNone;
  if (name == "softmax") return MixingNorm::kSoftmax;
  throw ConfigError("unknown mixing norm '" + std::string(name) + "' (expected none|softmax)");
}

void AttentionConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0) throw ConfigError("attention: d_model and n_heads must be positive");
  if (d_model % n_heads != 0) {
    throw ConfigError("attention: d_model " + std::to_string(d_model) +
                      " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (ctx_len < 1) throw ConfigError("attention: ctx_len must be at least 1");
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> AttentionParams<T>::named() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  auto put = [&](const char* name, const Tensor<T>& t) {
    if (t.defined()) out.emplace_back(name, t);
  };
  put("w_q", w_q);
  put("w_k", w_k);
  put("w_v", w_v);
  put("w_a", w_a);
  put("w_o", w_o);
  put("b_q", b_q);
  put("b_k", b_k);
  put("b_v", b_v);
  put("b_o", b_o);
  return out;
}

template <typename T>
std::int64_t AttentionParams<T>::numel() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : named()) n += t.numel();
  return n;
}

namespace {

template <typename T>
Tensor<T> xavier(std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> v(static_cast<std::size_t>(fan_in * fan_out));
  for (T& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(Shape{fan_in, fan_out}, std::move(v), true);
}

template <typename T>
Tensor<T> identity_mixing(const AttentionConfig& cfg) {
  const std::int64_t L = cfg.ctx_len;
  const std::int64_t copies = cfg.mixing_scope == MixingScope::kPerHead ? cfg.n_heads : 1;
  std::vector<T> v(static_cast<std::size_t>(copies * L * L), T(0));
  for (std::int64_t h = 0; h < copies; ++h)
    for (std::int64_t i = 0; i < L; ++i) v[static_cast<std::size_t>((h * L + i) * L + i)] = T(1);
  Shape shape = cfg.mixing_scope == MixingScope::kPerHead ? Shape{copies, L, L} : Shape{L, L};
  return Tensor<T>(std::move(shape), std::move(v), true);
}

void check_input(const Shape& x, const AttentionConfig& cfg) {
  if (x.size() != 3 || x[2] != cfg.d_model) {
    throw ShapeError("attention: input " + to_string(x) + " does not match d_model " +
                     std::to_string(cfg.d_model));
  }
}

template <typename T>
void check_square(const Tensor<T>& w, std::int64_t d, const char* name) {
  if (!w.defined() || w.shape() != Shape{d, d}) {
    throw ShapeError(std::string("attention: ") + name + " must be [" + std::to_string(d) + ", " +
                     std::to_string(d) + "]" +
                     (w.defined() ? ", got " + to_string(w.shape()) : std::string(", missing")));
  }
}

// Query/key heads and post-softmax probabilities.
template <typename T>
Tensor<T> score_probs(const Tensor<T>& x, const AttentionParams<T>& p, const AttentionConfig& cfg) {
  check_square(p.w_q, cfg.d_model, "w_q");
  check_square(p.w_k, cfg.d_model, "w_k");
  const auto q = ops::split_heads(ops::linear(x, p.w_q, p.b_q), cfg.n_heads);
  const auto k = ops::split_heads(ops::linear(x, p.w_k, p.b_k), cfg.n_heads);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(cfg.head_dim()));
  return ops::softmax_rows(ops::matmul(q, k, /*transpose_b=*/true), inv_sqrt);
}

template <typename T>
Tensor<T> finish(const Tensor<T>& probs, const Tensor<T>& v_heads, const AttentionParams<T>& p,
                 const AttentionConfig& cfg) {
  check_square(p.w_o, cfg.d_model, "w_o");
  return ops::linear(ops::merge_heads(ops::matmul(probs, v_heads)), p.w_o, p.b_o);
}

}  // namespace

template <typename T>
AttentionParams<T> init_attention_params(const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::int64_t d = cfg.d_model;
  AttentionParams<T> p;
  p.w_q = xavier<T>(d, d, rng);
  p.w_k = xavier<T>(d, d, rng);
  if (cfg.kind == AttentionKind::kSdpa) {
    p.w_v = xavier<T>(d, d, rng);
  } else {
    p.w_a = identity_mixing<T>(cfg);
  }
  p.w_o = xavier<T>(d, d, rng);
  if (cfg.use_bias) {
    p.b_q = Tensor<T>::zeros({d}, true);
    p.b_k = Tensor<T>::zeros({d}, true);
    if (cfg.kind == AttentionKind::kSdpa) p.b_v = Tensor<T>::zeros({d}, true);
    p.b_o = Tensor<T>::zeros({d}, true);
  }
  return p;
}

template <typename T>
Tensor<T> attention_scores(const Tensor<T>& x, const AttentionParams<T>& p,
                           const AttentionConfig& cfg) {
  cfg.validate();
  check_input(x.shape(), cfg);
  return score_probs(x, p, cfg);
}

template <typename T>
Tensor<T> sdpa_forward(const Tensor<T>& x, const AttentionParams<T>& p, const AttentionConfig& cfg) {
  cfg.validate();
  check_input(x.shape(), cfg);
  check_square(p.w_v, cfg.d_model, "w_v");
  const auto probs = score_probs(x, p, cfg);
  const auto v = ops::split_heads(ops::linear(x, p.w_v, p.b_v), cfg.n_heads);
  return finish(probs, v, p, cfg);
}

template <typename T>
Tensor<T> super_forward(const Tensor<T>& x, const AttentionParams<T>& p, const AttentionConfig& cfg) {
  cfg.validate();
  check_input(x.shape(), cfg);
  const std::int64_t L = cfg.ctx_len;
  if (x.dim(1) != L) {
    throw ContextLengthError("super attention: sequence length " + std::to_string(x.dim(1)) +
                             " differs from the fixed context length " + std::to_string(L));
  }
  const bool per_head = cfg.mixing_scope == MixingScope::kPerHead;
  const Shape expected = per_head ? Shape{cfg.n_heads, L, L} : Shape{L, L};
  if (!p.w_a.defined() || p.w_a.shape() != expected) {
    throw ShapeError("super attention: w_a must be " + to_string(expected) +
                     (p.w_a.defined() ? ", got " + to_string(p.w_a.shape()) : std::string(", missing")));
  }
  const auto probs = score_probs(x, p, cfg);
  const auto mixer = cfg.mixing_norm == MixingNorm::kSoftmax ? ops::softmax_rows(p.w_a) : p.w_a;
  Tensor<T> v;
  if (per_head) {
    v = ops::matmul(mixer, ops::split_heads(x, cfg.n_heads));
  } else {
    v = ops::split_heads(ops::matmul(mixer, x), cfg.n_heads);
  }
  return finish(probs, v, p, cfg);
}

template <typename T>
Tensor<T> attention_forward(const Tensor<T>& x, const AttentionParams<T>& p,
                            const AttentionConfig& cfg) {
  return cfg.kind == AttentionKind::kSdpa ? sdpa_forward(x, p, cfg) : super_forward(x, p, cfg);
}

std::int64_t attention_param_count(const AttentionConfig& cfg) {
  const std::int64_t d = cfg.d_model, L = cfg.ctx_len;
  if (cfg.kind == AttentionKind::kSdpa) return 4 * d * d + (cfg.use_bias ? 4 * d : 0);
  const std::int64_t copies = cfg.mixing_scope == MixingScope::kPerHead ? cfg.n_heads : 1;
  return 3 * d * d + copies * L * L + (cfg.use_bias ? 3 * d : 0);
}

FlopsBreakdown attention_flops(const AttentionConfig& cfg) {
  const std::int64_t d = cfg.d_model, L = cfg.ctx_len;
  FlopsBreakdown f;
  f.q_proj = 2 * L * d * d;
  f.k_proj = 2 * L * d * d;
  if (cfg.kind == AttentionKind::kSdpa) {
    f.v_proj = 2 * L * d * d;
  } else {
    f.token_mixing = 2 * L * L * d;
  }
  f.scores = 2 * L * L * d;
  f.weighted_values = 2 * L * L * d;
  f.out_proj = 2 * L * d * d;
  return f;
}

#define CCT_INSTANTIATE_ATTENTION(T)                                                             \
  template struct AttentionParams<T>;                                                            \
  template AttentionParams<T> init_attention_params<T>(const AttentionConfig&, Rng&);            \
  template Tensor<T> sdpa_forward(const Tensor<T>&, const AttentionParams<T>&,                   \
                                  const AttentionConfig&);                                       \
  template Tensor<T> super_forward(const Tensor<T>&, const AttentionParams<T>&,                  \
                                   const AttentionConfig&);                                      \
  template Tensor<T> attention_forward(const Tensor<T>&, const AttentionParams<T>&,              \
                                       const AttentionConfig&);                                  \
  template Tensor<T> attention_scores(const Tensor<T>&, const AttentionParams<T>&,               \
                                      const AttentionConfig&);

CCT_INSTANTIATE_ATTENTION(float)
CCT_INSTANTIATE_ATTENTION(double)

#undef CCT_INSTANTIATE_ATTENTION

}  // namespace cct
