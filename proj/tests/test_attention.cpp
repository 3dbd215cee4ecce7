#include <gtest/gtest.h>

#include <numeric>

#include "cct/attention.hpp"
#include "cct/errors.hpp"
#include "cct/ops.hpp"
#include "reference.hpp"

using namespace cct;
using T64 = Tensor<double>;

namespace {

AttentionConfig make_cfg(AttentionKind kind, std::int64_t d, std::int64_t heads, std::int64_t L) {
  AttentionConfig c;
  c.kind = kind;
  c.d_model = d;
  c.n_heads = heads;
  c.ctx_len = L;
  return c;
}

AttentionParams<double> random_params(const AttentionConfig& cfg, Rng& rng) {
  AttentionParams<double> p = init_attention_params<double>(cfg, rng);
  for (auto& [name, t] : p.named()) {
    auto copy = t;
    for (double& v : copy.mutable_data()) v = 0.5 * rng.normal();
  }
  return p;
}

ref::Mat as_mat(const T64& t) { return ref::rows_of(t, 0, t.dim(-2), t.dim(-1)); }

std::vector<double> as_vec(const T64& t) {
  return t.defined() ? std::vector<double>(t.data().begin(), t.data().end()) : std::vector<double>{};
}

ref::AttnWeights ref_weights(const AttentionParams<double>& p, const AttentionConfig& cfg) {
  ref::AttnWeights w;
  w.wq = as_mat(p.w_q);
  w.wk = as_mat(p.w_k);
  w.wo = as_mat(p.w_o);
  if (p.w_v.defined()) w.wv = as_mat(p.w_v);
  if (p.w_a.defined()) {
    const std::int64_t L = cfg.ctx_len;
    const std::int64_t copies = p.w_a.numel() / (L * L);
    for (std::int64_t h = 0; h < copies; ++h) w.wa.push_back(ref::rows_of(p.w_a, h * L, L, L));
  }
  w.bq = as_vec(p.b_q);
  w.bk = as_vec(p.b_k);
  w.bv = as_vec(p.b_v);
  w.bo = as_vec(p.b_o);
  w.softmax_mixing = cfg.mixing_norm == MixingNorm::kSoftmax;
  return w;
}

// Rows of x [B, L, d] reordered so that out[b, i] = x[b, perm[i]].
T64 permute_tokens(const T64& x, const std::vector<std::int64_t>& perm) {
  const std::int64_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < L; ++i)
      for (std::int64_t j = 0; j < d; ++j)
        out[static_cast<std::size_t>((b * L + i) * d + j)] = x.data()[static_cast<std::size_t>((b * L + perm[i]) * d + j)];
  return T64(x.shape(), std::move(out));
}

// P^T A P for the permutation matrix with P[i, perm[i]] = 1.
T64 conjugate(const T64& a, const std::vector<std::int64_t>& perm) {
  const std::int64_t L = a.dim(-1);
  std::vector<double> out(static_cast<std::size_t>(L * L));
  for (std::int64_t i = 0; i < L; ++i)
    for (std::int64_t j = 0; j < L; ++j)
      out[static_cast<std::size_t>(perm[i] * L + perm[j])] = a.data()[static_cast<std::size_t>(i * L + j)];
  return T64(a.shape(), std::move(out));
}

std::vector<std::int64_t> random_perm(std::int64_t n, Rng& rng) {
  std::vector<std::int64_t> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

}  // namespace

TEST(AttentionConfig, ValidationAndNames) {
  EXPECT_THROW(make_cfg(AttentionKind::kSdpa, 10, 3, 4).validate(), ConfigError);
  EXPECT_THROW(make_cfg(AttentionKind::kSdpa, 8, 2, 0).validate(), ConfigError);
  EXPECT_EQ(parse_attention_kind("super"), AttentionKind::kSuper);
  EXPECT_EQ(to_string(AttentionKind::kSdpa), "sdpa");
  EXPECT_EQ(parse_mixing_scope(to_string(MixingScope::kPerHead)), MixingScope::kPerHead);
  EXPECT_EQ(parse_mixing_norm(to_string(MixingNorm::kSoftmax)), MixingNorm::kSoftmax);
  EXPECT_THROW(parse_attention_kind("linear"), ConfigError);
}

TEST(AttentionParams, ShapesAndIdentityMixing) {
  Rng rng(1);
  const auto sdpa = init_attention_params<double>(make_cfg(AttentionKind::kSdpa, 8, 2, 5), rng);
  EXPECT_TRUE(sdpa.w_v.defined());
  EXPECT_FALSE(sdpa.w_a.defined());
  const auto sup = init_attention_params<double>(make_cfg(AttentionKind::kSuper, 8, 2, 5), rng);
  EXPECT_FALSE(sup.w_v.defined());
  ASSERT_EQ(sup.w_a.shape(), (Shape{5, 5}));
  for (std::int64_t i = 0; i < 5; ++i)
    for (std::int64_t j = 0; j < 5; ++j) EXPECT_EQ(sup.w_a.at({i, j}), i == j ? 1.0 : 0.0);
  auto per_head = make_cfg(AttentionKind::kSuper, 8, 1, 5);
  per_head.mixing_scope = MixingScope::kPerHead;
  EXPECT_EQ(init_attention_params<double>(per_head, rng).w_a.shape(), (Shape{1, 5, 5}));
}

TEST(Attention, MatchesBruteForceForEveryVariant) {
  Rng rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    const bool super = trial % 2;
    auto cfg = make_cfg(super ? AttentionKind::kSuper : AttentionKind::kSdpa, 0, 1 + rng.below(3), 1 + rng.below(5));
    cfg.d_model = cfg.n_heads * (1 + static_cast<std::int64_t>(rng.below(3)));
    cfg.use_bias = rng.below(2);
    cfg.mixing_scope = rng.below(2) ? MixingScope::kPerHead : MixingScope::kShared;
    cfg.mixing_norm = rng.below(2) ? MixingNorm::kSoftmax : MixingNorm::kNone;
    const auto p = random_params(cfg, rng);
    const std::int64_t B = 2;
    const auto x = ref::randn<double>({B, cfg.ctx_len, cfg.d_model}, rng);
    const auto y = attention_forward(x, p, cfg);
    ASSERT_EQ(y.shape(), x.shape());
    const auto w = ref_weights(p, cfg);
    for (std::int64_t b = 0; b < B; ++b) {
      const auto want = ref::attention(ref::rows_of(x, b * cfg.ctx_len, cfg.ctx_len, cfg.d_model), w,
                                       static_cast<std::size_t>(cfg.n_heads));
      const auto got = ref::rows_of(y, b * cfg.ctx_len, cfg.ctx_len, cfg.d_model);
      for (std::size_t i = 0; i < want.size(); ++i)
        for (std::size_t j = 0; j < want[0].size(); ++j) ASSERT_NEAR(got[i][j], want[i][j], 1e-12);
    }
  }
}

TEST(Attention, HandEvaluatedTwoTokenCase) {
  // B=1, L=2, d=2, H=1, W_Q = W_K = W_V = W_O = I, x = [[1, 0], [0, 1]].
  // Scores are x x^T / sqrt(2): softmax rows give [e, 1] / (e + 1) with e = exp(1/sqrt(2)).
  auto cfg = make_cfg(AttentionKind::kSdpa, 2, 1, 2);
  AttentionParams<double> p;
  p.w_q = p.w_k = p.w_v = p.w_o = T64(Shape{2, 2}, {1, 0, 0, 1});
  const auto y = sdpa_forward(T64(Shape{1, 2, 2}, {1, 0, 0, 1}), p, cfg);
  const double e = std::exp(1.0 / std::sqrt(2.0));
  EXPECT_NEAR(y.at({0, 0, 0}), e / (e + 1), 1e-15);
  EXPECT_NEAR(y.at({0, 0, 1}), 1 / (e + 1), 1e-15);
  EXPECT_NEAR(y.at({0, 1, 0}), 1 / (e + 1), 1e-15);
  EXPECT_NEAR(y.at({0, 1, 1}), e / (e + 1), 1e-15);
}

TEST(Attention, SingleTokenIdentityWeightsReturnInput) {
  for (auto kind : {AttentionKind::kSdpa, AttentionKind::kSuper}) {
    auto cfg = make_cfg(kind, 3, 1, 1);
    AttentionParams<double> p;
    const T64 eye(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    p.w_q = p.w_k = p.w_o = eye;
    if (kind == AttentionKind::kSdpa) p.w_v = eye;
    else p.w_a = T64(Shape{1, 1}, {1.0});
    const T64 x(Shape{1, 1, 3}, {0.3, -2.0, 5.0});
    const auto y = attention_forward(x, p, cfg);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-15);
  }
}

TEST(Attention, IdenticalTokensGiveIdenticalRows) {
  Rng rng(3);
  const auto cfg = make_cfg(AttentionKind::kSdpa, 4, 2, 3);
  const auto p = random_params(cfg, rng);
  std::vector<double> row{0.1, 0.2, -0.3, 0.4}, x;
  for (int i = 0; i < 3; ++i) x.insert(x.end(), row.begin(), row.end());
  const auto y = sdpa_forward(T64(Shape{1, 3, 4}, x), p, cfg);
  for (std::int64_t i = 1; i < 3; ++i)
    for (std::int64_t j = 0; j < 4; ++j) EXPECT_EQ(y.at({0, i, j}), y.at({0, 0, j}));
}

TEST(SuperAttention, IdentityMixingEqualsSdpaWithoutValueProjection) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t H = 1 + rng.below(4), d = H * (1 + rng.below(8)), L = 1 + rng.below(16);
    auto sup = make_cfg(AttentionKind::kSuper, d, H, L);
    auto sdpa = make_cfg(AttentionKind::kSdpa, d, H, L);
    auto p = init_attention_params<double>(sup, rng);
    AttentionParams<double> q = p;
    q.w_a = T64{};
    std::vector<double> eye(static_cast<std::size_t>(d * d), 0.0);
    for (std::int64_t i = 0; i < d; ++i) eye[static_cast<std::size_t>(i * d + i)] = 1.0;
    q.w_v = T64(Shape{d, d}, eye);
    const auto x = ref::randn<double>({2, L, d}, rng);
    const auto a = super_forward(x, p, sup), b = sdpa_forward(x, q, sdpa);
    ASSERT_LT(ref::max_abs_diff(a.data(), b.data()), 1e-6);
  }
}

TEST(SuperAttention, UniformMixingMakesAllRowsEqual) {
  Rng rng(5);
  const std::int64_t L = 5;
  const auto cfg = make_cfg(AttentionKind::kSuper, 6, 2, L);
  auto p = random_params(cfg, rng);
  for (double& v : p.w_a.mutable_data()) v = 1.0 / L;
  const auto y = super_forward(ref::randn<double>({1, L, 6}, rng), p, cfg);
  for (std::int64_t i = 1; i < L; ++i)
    for (std::int64_t j = 0; j < 6; ++j) EXPECT_NEAR(y.at({0, i, j}), y.at({0, 0, j}), 1e-12);
}

TEST(SuperAttention, WrongSequenceLengthIsAContextLengthError) {
  Rng rng(6);
  const auto cfg = make_cfg(AttentionKind::kSuper, 4, 1, 4);
  const auto p = init_attention_params<double>(cfg, rng);
  EXPECT_THROW(super_forward(T64::zeros({1, 3, 4}), p, cfg), ContextLengthError);
  EXPECT_THROW(super_forward(T64::zeros({1, 4, 5}), p, cfg), ShapeError);
}

TEST(AttentionScores, RowsAreDistributions) {
  Rng rng(7);
  auto cfg = make_cfg(AttentionKind::kSdpa, 4, 2, 1);
  auto p = random_params(cfg, rng);
  const auto single = attention_scores(ref::randn<double>({2, 1, 4}, rng), p, cfg);
  for (double v : single.data()) EXPECT_EQ(v, 1.0);

  cfg.ctx_len = 6;
  p = random_params(cfg, rng);
  for (double& v : p.w_q.mutable_data()) v = 0.0;
  const auto uniform = attention_scores(ref::randn<double>({1, 6, 4}, rng), p, cfg);
  for (double v : uniform.data()) EXPECT_NEAR(v, 1.0 / 6, 1e-15);

  p = random_params(cfg, rng);
  const auto s = attention_scores(ref::randn<double>({3, 6, 4}, rng, 3.0), p, cfg);
  ASSERT_EQ(s.shape(), (Shape{3, 2, 6, 6}));
  for (std::int64_t r = 0; r < s.numel() / 6; ++r) {
    double sum = 0.0;
    for (std::int64_t j = 0; j < 6; ++j) sum += s.data()[static_cast<std::size_t>(r * 6 + j)];
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Permutation, SdpaIsEquivariant) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cfg = make_cfg(AttentionKind::kSdpa, 8, 2, 7);
    const auto p = random_params(cfg, rng);
    const auto x = ref::randn<double>({2, 7, 8}, rng);
    const auto perm = random_perm(7, rng);
    const auto lhs = sdpa_forward(permute_tokens(x, perm), p, cfg);
    const auto rhs = permute_tokens(sdpa_forward(x, p, cfg), perm);
    ASSERT_LT(ref::max_abs_diff(lhs.data(), rhs.data()), 1e-5);
  }
}

TEST(Permutation, SuperSatisfiesConjugationIdentityButNotPlainEquivariance) {
  Rng rng(9);
  int broken = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto cfg = make_cfg(AttentionKind::kSuper, 8, 2, 7);
    const auto p = random_params(cfg, rng);  // generic, non-identity W_A
    const auto x = ref::randn<double>({2, 7, 8}, rng);
    const auto perm = random_perm(7, rng);
    auto conj = p;
    conj.w_a = conjugate(p.w_a, perm);
    const auto lhs = super_forward(permute_tokens(x, perm), p, cfg);
    const auto rhs = permute_tokens(super_forward(x, conj, cfg), perm);
    ASSERT_LT(ref::max_abs_diff(lhs.data(), rhs.data()), 1e-5);
    const auto plain = permute_tokens(super_forward(x, p, cfg), perm);
    bool identity_perm = true;
    for (std::size_t i = 0; i < perm.size(); ++i) identity_perm &= perm[i] == static_cast<std::int64_t>(i);
    if (!identity_perm && ref::max_abs_diff(lhs.data(), plain.data()) > 1e-3) ++broken;
  }
  EXPECT_GE(broken, 19);
}

TEST(ParamCount, HandEnumerations) {
  EXPECT_EQ(attention_param_count(make_cfg(AttentionKind::kSdpa, 4, 1, 2)), 64);
  EXPECT_EQ(attention_param_count(make_cfg(AttentionKind::kSuper, 4, 1, 2)), 52);
  const auto s = attention_param_count(make_cfg(AttentionKind::kSuper, 512, 4, 256));
  const auto d = attention_param_count(make_cfg(AttentionKind::kSdpa, 512, 4, 256));
  EXPECT_EQ(s, 851968);
  EXPECT_EQ(d, 1048576);
  EXPECT_EQ(static_cast<double>(s) / static_cast<double>(d), 0.8125);
  EXPECT_EQ(attention_param_count(make_cfg(AttentionKind::kSuper, 64, 4, 64)),
            attention_param_count(make_cfg(AttentionKind::kSdpa, 64, 4, 64)) - 64 * 64 + 64 * 64);
}

TEST(ParamCount, EqualsAllocatedElements) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    auto cfg = make_cfg(rng.below(2) ? AttentionKind::kSuper : AttentionKind::kSdpa, 0, 1 + rng.below(4),
                        1 + rng.below(40));
    cfg.d_model = cfg.n_heads * (1 + static_cast<std::int64_t>(rng.below(16)));
    cfg.use_bias = rng.below(2);
    cfg.mixing_scope = rng.below(2) ? MixingScope::kPerHead : MixingScope::kShared;
    std::int64_t n = 0;
    for (const auto& [name, t] : init_attention_params<float>(cfg, rng).named()) n += t.numel();
    ASSERT_EQ(attention_param_count(cfg), n);
  }
}

TEST(Flops, StageCountsAndCrossover) {
  const auto sup = attention_flops(make_cfg(AttentionKind::kSuper, 512, 4, 256));
  const auto sdpa = attention_flops(make_cfg(AttentionKind::kSdpa, 512, 4, 256));
  EXPECT_EQ(sdpa.v_proj, 134217728);
  EXPECT_EQ(sup.token_mixing, 67108864);
  EXPECT_EQ(sup.v_proj, 0);
  EXPECT_LT(sup.total(), sdpa.total());
  EXPECT_EQ(attention_flops(make_cfg(AttentionKind::kSuper, 256, 4, 256)).total(),
            attention_flops(make_cfg(AttentionKind::kSdpa, 256, 4, 256)).total());
  EXPECT_GT(attention_flops(make_cfg(AttentionKind::kSuper, 128, 4, 1024)).total(),
            attention_flops(make_cfg(AttentionKind::kSdpa, 128, 4, 1024)).total());
}
