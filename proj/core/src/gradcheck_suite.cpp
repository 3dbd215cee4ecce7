#include "cct/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>

#include "cct/attention.hpp"
#include "cct/errors.hpp"
#include "cct/gradcheck.hpp"
#include "cct/model.hpp"
#include "cct/ops.hpp"
#include "cct/random.hpp"

namespace cct {
namespace {

using T64 = Tensor<double>;
using Inputs = std::span<const T64>;

struct Instance {
  std::string desc;
  GradCheckFn fn;
  std::vector<T64> point;
};

using Generator = std::function<Instance(Rng&)>;

std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

T64 randn(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (double& x : v) x = scale * rng.normal();
  return T64(std::move(shape), std::move(v));
}

// Values with |x| >= margin, for ops with a kink at zero.
T64 randn_off_zero(Shape shape, Rng& rng, double margin) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (double& x : v) {
    const double m = margin + std::abs(rng.normal());
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return T64(std::move(shape), std::move(v));
}

// Distinct values at least `gap` apart in random order, for max reductions.
T64 spread_values(Shape shape, Rng& rng, double gap) {
  const auto n = static_cast<std::size_t>(numel(shape));
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = (static_cast<double>(i) - 0.5 * static_cast<double>(n)) * gap;
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return T64(std::move(shape), std::move(v));
}

std::string shape_str(const Shape& s) { return to_string(s); }

const char* yes_no(bool b) { return b ? "yes" : "no"; }

// -- element-wise and structural ops -----------------------------------------

Instance gen_matmul(Rng& rng) {
  const std::int64_t m = pick(rng, 1, 4), k = pick(rng, 1, 4), n = pick(rng, 1, 4);
  const int variant = static_cast<int>(rng.below(4));
  const bool tb = rng.uniform() < 0.5;
  Shape a{m, k}, b = tb ? Shape{n, k} : Shape{k, n};
  if (variant == 1) {
    a.insert(a.begin(), pick(rng, 2, 3));  // batched a, shared b
  } else if (variant == 2) {
    const std::int64_t batch = pick(rng, 2, 3);
    a.insert(a.begin(), batch);
    b.insert(b.begin(), batch);
  } else if (variant == 3) {
    const std::int64_t inner = pick(rng, 2, 3);
    a.insert(a.begin(), {pick(rng, 1, 2), inner});
    b.insert(b.begin(), inner);  // suffix broadcast
  }
  Instance in;
  in.desc = shape_str(a) + " x " + shape_str(b) + (tb ? " (b transposed)" : "");
  in.point = {randn(a, rng), randn(b, rng)};
  in.fn = [tb](Inputs x) { return ops::matmul(x[0], x[1], tb); };
  return in;
}

Shape small_shape(Rng& rng) {
  Shape s;
  const auto rank = pick(rng, 1, 3);
  for (std::int64_t i = 0; i < rank; ++i) s.push_back(pick(rng, 1, 4));
  return s;
}

Instance gen_add(Rng& rng) {
  const Shape s = small_shape(rng);
  const bool aliased = rng.below(5) == 0;
  Instance in;
  in.desc = shape_str(s) + (aliased ? " aliased" : "");
  in.point = {randn(s, rng), randn(s, rng)};
  in.fn = [aliased](Inputs x) { return ops::add(x[0], aliased ? x[0] : x[1]); };
  return in;
}

Instance gen_mul(Rng& rng) {
  const Shape s = small_shape(rng);
  const bool aliased = rng.below(5) == 0;
  Instance in;
  in.desc = shape_str(s) + (aliased ? " aliased" : "");
  in.point = {randn(s, rng), randn(s, rng)};
  in.fn = [aliased](Inputs x) { return ops::mul(x[0], aliased ? x[0] : x[1]); };
  return in;
}

Instance gen_scale(Rng& rng) {
  const Shape s = small_shape(rng);
  const double f = rng.uniform(-3.0, 3.0);
  Instance in;
  in.desc = shape_str(s) + " factor " + std::to_string(f);
  in.point = {randn(s, rng)};
  in.fn = [f](Inputs x) { return ops::scale(x[0], f); };
  return in;
}

Instance gen_sum(Rng& rng) {
  const Shape s = small_shape(rng);
  Instance in;
  in.desc = shape_str(s);
  in.point = {randn(s, rng)};
  // Square first so the check is not of a constant gradient only.
  in.fn = [](Inputs x) { return ops::sum(ops::mul(x[0], x[0])); };
  return in;
}

Instance gen_reshape(Rng& rng) {
  const std::int64_t a = pick(rng, 1, 4), b = pick(rng, 1, 4), c = pick(rng, 1, 3);
  Instance in;
  in.desc = shape_str({a, b, c}) + " -> " + shape_str({c, a * b});
  in.point = {randn({a, b, c}, rng), randn({c, a * b}, rng)};
  in.fn = [c, a, b](Inputs x) { return ops::mul(ops::reshape(x[0], Shape{c, a * b}), x[1]); };
  return in;
}

Instance gen_spatial_to_tokens(Rng& rng) {
  const Shape s{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 3), pick(rng, 1, 3)};
  Instance in;
  in.desc = shape_str(s);
  in.point = {randn(s, rng), randn({s[0], s[2] * s[3], s[1]}, rng)};
  in.fn = [](Inputs x) { return ops::mul(ops::spatial_to_tokens(x[0]), x[1]); };
  return in;
}

Instance gen_split_heads(Rng& rng) {
  const std::int64_t B = pick(rng, 1, 2), L = pick(rng, 1, 4), H = pick(rng, 1, 3), Dh = pick(rng, 1, 3);
  Instance in;
  in.desc = shape_str({B, L, H * Dh}) + " heads " + std::to_string(H);
  in.point = {randn({B, L, H * Dh}, rng), randn({B, H, L, Dh}, rng)};
  in.fn = [H](Inputs x) { return ops::mul(ops::split_heads(x[0], H), x[1]); };
  return in;
}

Instance gen_merge_heads(Rng& rng) {
  const std::int64_t B = pick(rng, 1, 2), L = pick(rng, 1, 4), H = pick(rng, 1, 3), Dh = pick(rng, 1, 3);
  Instance in;
  in.desc = shape_str({B, H, L, Dh});
  in.point = {randn({B, H, L, Dh}, rng), randn({B, L, H * Dh}, rng)};
  in.fn = [](Inputs x) { return ops::mul(ops::merge_heads(x[0]), x[1]); };
  return in;
}

Instance gen_relu(Rng& rng) {
  const Shape s = small_shape(rng);
  Instance in;
  in.desc = shape_str(s);
  in.point = {randn_off_zero(s, rng, 0.05)};
  in.fn = [](Inputs x) { return ops::relu(x[0]); };
  return in;
}

Instance gen_gelu(Rng& rng) {
  const Shape s = small_shape(rng);
  Instance in;
  in.desc = shape_str(s);
  in.point = {randn(s, rng, 2.0)};
  in.fn = [](Inputs x) { return ops::gelu(x[0]); };
  return in;
}

Instance gen_softmax_rows(Rng& rng) {
  Shape s = small_shape(rng);
  const double scale = rng.uniform(0.2, 2.0);
  Instance in;
  in.desc = shape_str(s) + " scale " + std::to_string(scale);
  in.point = {randn(s, rng, 2.0)};
  in.fn = [scale](Inputs x) { return ops::softmax_rows(x[0], scale); };
  return in;
}

Instance gen_layernorm(Rng& rng) {
  const std::int64_t rows = pick(rng, 1, 4), d = pick(rng, 2, 6);
  const double eps = rng.uniform() < 0.5 ? 1e-5 : 1e-3;
  Instance in;
  in.desc = shape_str({rows, d}) + " eps " + std::to_string(eps);
  in.point = {randn({rows, d}, rng), randn({d}, rng), randn({d}, rng)};
  in.fn = [eps](Inputs x) { return ops::layernorm(x[0], x[1], x[2], eps); };
  return in;
}

Instance gen_linear(Rng& rng) {
  const std::int64_t B = pick(rng, 1, 3), L = pick(rng, 1, 3), din = pick(rng, 1, 4), dout = pick(rng, 1, 4);
  const bool bias = rng.uniform() < 0.7;
  Instance in;
  in.desc = shape_str({B, L, din}) + " -> " + std::to_string(dout) + " bias " + yes_no(bias);
  in.point = {randn({B, L, din}, rng), randn({din, dout}, rng)};
  if (bias) in.point.push_back(randn({dout}, rng));
  in.fn = [bias](Inputs x) { return ops::linear(x[0], x[1], bias ? x[2] : T64{}); };
  return in;
}

Instance gen_dropout(Rng& rng) {
  const Shape s = small_shape(rng);
  const double p = rng.uniform(0.1, 0.6);
  const std::uint64_t seed = rng.below(1u << 30);
  Instance in;
  in.desc = shape_str(s) + " p " + std::to_string(p);
  in.point = {randn(s, rng)};
  in.fn = [p, seed](Inputs x) { return ops::dropout(x[0], p, true, seed); };
  return in;
}

Instance gen_cross_entropy(Rng& rng) {
  const std::int64_t B = pick(rng, 1, 4), C = pick(rng, 2, 6);
  std::vector<std::int32_t> labels(static_cast<std::size_t>(B));
  for (auto& l : labels) l = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(C)));
  Instance in;
  in.desc = shape_str({B, C});
  in.point = {randn({B, C}, rng, 2.0)};
  in.fn = [labels](Inputs x) { return ops::cross_entropy(x[0], labels); };
  return in;
}

Instance gen_conv2d(Rng& rng) {
  const std::int64_t B = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
  const std::int64_t k = rng.uniform() < 0.5 ? 1 : 3;
  const std::int64_t pad = k / 2;
  const std::int64_t stride = rng.uniform() < 0.7 ? 1 : 2;
  // Pick a size so (H + 2p - k) is divisible by the stride.
  std::int64_t H = pick(rng, 3, 5);
  while ((H + 2 * pad - k) % stride != 0) ++H;
  const bool bias = rng.uniform() < 0.7;
  Instance in;
  in.desc = shape_str({B, cin, H, H}) + " k " + std::to_string(k) + " s " + std::to_string(stride) +
            " p " + std::to_string(pad) + " bias " + yes_no(bias);
  in.point = {randn({B, cin, H, H}, rng), randn({cout, cin, k, k}, rng)};
  if (bias) in.point.push_back(randn({cout}, rng));
  in.fn = [stride, pad, bias](Inputs x) { return ops::conv2d(x[0], x[1], bias ? x[2] : T64{}, stride, pad); };
  return in;
}

Instance gen_maxpool2d(Rng& rng) {
  const std::int64_t B = pick(rng, 1, 2), C = pick(rng, 1, 2), H = pick(rng, 3, 6);
  const std::int64_t k = pick(rng, 2, 3), stride = pick(rng, 1, 2);
  const std::int64_t pad = rng.uniform() < 0.5 ? 0 : k / 2;
  Instance in;
  in.desc = shape_str({B, C, H, H}) + " k " + std::to_string(k) + " s " + std::to_string(stride) + " p " +
            std::to_string(pad);
  in.point = {spread_values({B, C, H, H}, rng, 0.01)};
  in.fn = [k, stride, pad](Inputs x) { return ops::maxpool2d(x[0], k, stride, pad); };
  return in;
}

Instance gen_seq_pool(Rng& rng) {
  const std::int64_t B = pick(rng, 1, 3), L = pick(rng, 1, 5), d = pick(rng, 1, 4);
  Instance in;
  in.desc = shape_str({B, L, d});
  in.point = {randn({B, L, d}, rng), randn({d}, rng)};
  in.fn = [](Inputs x) { return seq_pool(x[0], x[1]); };
  return in;
}

// -- attention and the encoder block -----------------------------------------

AttentionConfig random_attention(Rng& rng, AttentionKind kind) {
  AttentionConfig cfg;
  cfg.kind = kind;
  cfg.n_heads = pick(rng, 1, 2);
  cfg.d_model = cfg.n_heads * pick(rng, 1, 3);
  cfg.ctx_len = pick(rng, 1, 4);
  cfg.use_bias = rng.uniform() < 0.3;
  if (kind == AttentionKind::kSuper) {
    cfg.mixing_scope = rng.uniform() < 0.5 ? MixingScope::kShared : MixingScope::kPerHead;
    cfg.mixing_norm = rng.uniform() < 0.5 ? MixingNorm::kNone : MixingNorm::kSoftmax;
  }
  return cfg;
}

std::string describe(const AttentionConfig& c, std::int64_t batch) {
  std::string s = "B " + std::to_string(batch) + " L " + std::to_string(c.ctx_len) + " d " +
                  std::to_string(c.d_model) + " H " + std::to_string(c.n_heads) + " bias " + yes_no(c.use_bias);
  if (c.kind == AttentionKind::kSuper) {
    s += " mixing " + std::string(to_string(c.mixing_scope)) + "/" + std::string(to_string(c.mixing_norm));
  }
  return s;
}

Instance gen_attention(Rng& rng, AttentionKind kind) {
  const AttentionConfig cfg = random_attention(rng, kind);
  const std::int64_t B = pick(rng, 1, 2);
  Rng init(rng.below(1ull << 40));
  AttentionParams<double> p = init_attention_params<double>(cfg, init);
  // Perturb the identity mixing matrix and zero biases so every path is exercised.
  std::vector<std::string> names;
  Instance in;
  in.desc = describe(cfg, B);
  in.point.push_back(randn({B, cfg.ctx_len, cfg.d_model}, rng));
  for (auto& [name, t] : p.named()) {
    names.push_back(name);
    in.point.push_back(randn(t.shape(), rng, 0.7));
  }
  in.fn = [cfg, names](Inputs x) {
    AttentionParams<double> q;
    for (std::size_t i = 0; i < names.size(); ++i) {
      const std::string& n = names[i];
      const T64& t = x[i + 1];
      if (n == "w_q") q.w_q = t;
      else if (n == "w_k") q.w_k = t;
      else if (n == "w_v") q.w_v = t;
      else if (n == "w_a") q.w_a = t;
      else if (n == "w_o") q.w_o = t;
      else if (n == "b_q") q.b_q = t;
      else if (n == "b_k") q.b_k = t;
      else if (n == "b_v") q.b_v = t;
      else if (n == "b_o") q.b_o = t;
    }
    return attention_forward(x[0], q, cfg);
  };
  return in;
}

Instance gen_encoder_block(Rng& rng) {
  ModelConfig cfg;
  cfg.attention = rng.uniform() < 0.5 ? AttentionKind::kSdpa : AttentionKind::kSuper;
  cfg.n_heads = pick(rng, 1, 2);
  cfg.d_model = 2 * cfg.n_heads;
  cfg.mlp_ratio = pick(rng, 1, 2);
  cfg.n_layers = 1;
  cfg.n_classes = 2;
  cfg.img_size = 2 * pick(rng, 1, 2);  // ctx_len 1 or 4
  cfg.in_channels = 1;
  cfg.attention_bias = rng.uniform() < 0.3;
  cfg.mixing_scope = rng.uniform() < 0.5 ? MixingScope::kShared : MixingScope::kPerHead;
  cfg.mixing_norm = rng.uniform() < 0.5 ? MixingNorm::kNone : MixingNorm::kSoftmax;
  cfg.dropout_p = rng.uniform() < 0.3 ? 0.2 : 0.0;
  const std::uint64_t dropout_seed = rng.below(1u << 30);
  const std::int64_t B = pick(rng, 1, 2), L = cfg.ctx_len();

  std::vector<std::string> names;
  Instance in;
  in.desc = describe(cfg.attention_config(), B) + " kind " + std::string(to_string(cfg.attention)) +
            " mlp " + std::to_string(cfg.mlp_ratio) + " dropout " + std::to_string(cfg.dropout_p);
  in.point.push_back(randn({B, L, cfg.d_model}, rng));
  for (const auto& [name, shape] : canonical_param_layout(cfg)) {
    if (name.rfind("layer0.", 0) != 0) continue;
    names.push_back(name);
    const bool gain = name.size() > 6 && name.compare(name.size() - 6, 6, ".gamma") == 0;
    T64 t = randn(shape, rng, 0.5);
    if (gain)
      for (double& v : t.mutable_data()) v += 1.0;
    in.point.push_back(t);
  }
  in.fn = [cfg, names, dropout_seed](Inputs x) {
    ParameterSet<double> params;
    for (std::size_t i = 0; i < names.size(); ++i) params.insert(names[i], x[i + 1]);
    return encoder_block(x[0], params, cfg, 0, cfg.dropout_p > 0.0, dropout_seed);
  };
  return in;
}

const std::vector<std::pair<std::string, Generator>>& registry() {
  static const std::vector<std::pair<std::string, Generator>> ops = {
      {"matmul", gen_matmul},
      {"add", gen_add},
      {"mul", gen_mul},
      {"scale", gen_scale},
      {"sum", gen_sum},
      {"reshape", gen_reshape},
      {"spatial_to_tokens", gen_spatial_to_tokens},
      {"split_heads", gen_split_heads},
      {"merge_heads", gen_merge_heads},
      {"relu", gen_relu},
      {"gelu", gen_gelu},
      {"softmax_rows", gen_softmax_rows},
      {"layernorm", gen_layernorm},
      {"linear", gen_linear},
      {"dropout", gen_dropout},
      {"cross_entropy", gen_cross_entropy},
      {"conv2d", gen_conv2d},
      {"maxpool2d", gen_maxpool2d},
      {"seq_pool", gen_seq_pool},
      {"sdpa_attention", [](Rng& r) { return gen_attention(r, AttentionKind::kSdpa); }},
      {"super_attention", [](Rng& r) { return gen_attention(r, AttentionKind::kSuper); }},
      {"encoder_block", gen_encoder_block},
  };
  return ops;
}

class GeluFaultGuard {
 public:
  explicit GeluFaultGuard(bool enable) : previous_(ops::gelu_backward_fault()) {
    ops::set_gelu_backward_fault(enable);
  }
  ~GeluFaultGuard() { ops::set_gelu_backward_fault(previous_); }

 private:
  bool previous_;
};

}  // namespace

bool GradCheckSuiteReport::passed() const {
  return std::all_of(ops.begin(), ops.end(), [](const GradCheckOpResult& r) { return r.passed; });
}

std::vector<std::string> GradCheckSuiteReport::failures() const {
  std::vector<std::string> out;
  for (const auto& r : ops)
    if (!r.passed) out.push_back(r.op);
  return out;
}

const std::vector<std::string>& gradcheck_suite_ops() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [name, gen] : registry()) v.push_back(name);
    return v;
  }();
  return names;
}

GradCheckSuiteReport run_gradcheck_suite(const GradCheckSuiteOptions& options) {
  if (options.instances < 1) throw ConfigError("gradcheck: instances must be at least 1");
  for (const auto& name : options.only) {
    const auto& all = gradcheck_suite_ops();
    if (std::find(all.begin(), all.end(), name) == all.end()) {
      throw ConfigError("gradcheck: unknown op '" + name + "'");
    }
  }
  GeluFaultGuard fault(options.inject_gelu_fault);
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckSuiteReport report;
  report.tol = options.tol;
  for (const auto& [name, gen] : registry()) {
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), name) == options.only.end()) {
      continue;
    }
    GradCheckOpResult r;
    r.op = name;
    Rng rng(derive_seed(options.seed, hash_name(name)));
    for (int i = 0; i < options.instances; ++i) {
      Instance inst = gen(rng);
      GradCheckOptions gc;
      gc.projection_seed = derive_seed(options.seed, hash_name(name), static_cast<std::uint64_t>(i));
      const GradCheckResult res = grad_check(inst.fn, std::move(inst.point), gc);
      r.coordinates += res.coordinates;
      ++r.instances;
      if (i == 0 || res.max_rel_error > r.max_rel_error) {
        r.max_rel_error = res.max_rel_error;
        r.worst_instance = inst.desc;
      }
    }
    r.passed = r.max_rel_error <= options.tol;
    report.ops.push_back(std::move(r));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::string format_gradcheck_report(const GradCheckSuiteReport& report) {
  std::ostringstream out;
  char buf[512];
  for (const auto& r : report.ops) {
    std::snprintf(buf, sizeof buf, "%-4s %-18s instances=%-4d coords=%-7lld max_rel_err=%.3e  worst: %s\n",
                  r.passed ? "ok" : "FAIL", r.op.c_str(), r.instances, static_cast<long long>(r.coordinates),
                  r.max_rel_error, r.worst_instance.c_str());
    out << buf;
  }
  const auto failed = report.failures();
  std::snprintf(buf, sizeof buf, "%zu ops, %zu failed, tol %.1e, %.1f s\n", report.ops.size(), failed.size(),
                report.tol, report.seconds);
  out << buf;
  if (!failed.empty()) {
    out << "failed:";
    for (const auto& f : failed) out << ' ' << f;
    out << '\n';
  }
  return out.str();
}

}  // namespace cct
