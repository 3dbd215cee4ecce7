#include "cct/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <sstream>

#include "cct/errors.hpp"
#include "cct/ops.hpp"
#include "cct/tape.hpp"

namespace cct {

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

using Clock = std::chrono::steady_clock;

template <typename F>
double time_ms(F&& f) {
  const auto t0 = Clock::now();
  f();
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

BenchRow bench_one(AttentionKind kind, std::int64_t d, std::int64_t ctx, const BenchOptions& o) {
  AttentionConfig cfg;
  cfg.kind = kind;
  cfg.d_model = d;
  cfg.n_heads = d % o.n_heads == 0 ? o.n_heads : 1;
  cfg.ctx_len = ctx;
  cfg.validate();

  Rng rng(derive_seed(o.seed, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(ctx)));
  auto params = init_attention_params<float>(cfg, rng);
  std::vector<float> xs(static_cast<std::size_t>(o.batch * ctx * d));
  for (float& v : xs) v = static_cast<float>(rng.normal());
  const Tensor<float> x(Shape{o.batch, ctx, d}, std::move(xs));

  auto forward_only = [&] {
    NoGradScope<float> no_grad;
    const auto y = attention_forward(x, params, cfg);
    volatile float sink = y.data()[0];
    (void)sink;
  };
  auto forward_backward = [&] {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    auto loss = ops::sum(attention_forward(x, params, cfg));
    tape.backward(loss);
    for (auto& [name, t] : params.named()) {
      auto copy = t;
      copy.zero_grad();
    }
  };

  BenchRow row;
  row.kind = kind;
  row.d_model = d;
  row.ctx_len = ctx;
  row.flops_model = attention_flops(cfg).total();
  for (int i = 0; i < o.warmup; ++i) forward_only();
  std::vector<double> fwd, fwd_bwd;
  for (int i = 0; i < o.iters; ++i) fwd.push_back(time_ms(forward_only));
  for (int i = 0; i < o.warmup; ++i) forward_backward();
  for (int i = 0; i < o.iters; ++i) fwd_bwd.push_back(time_ms(forward_backward));
  row.fwd_ms_median = median(std::move(fwd));
  row.fwd_bwd_ms_median = median(std::move(fwd_bwd));
  return row;
}

}  // namespace

std::vector<BenchRow> bench_attention(const BenchOptions& options) {
  if (options.iters < 10) throw ConfigError("bench: iters must be at least 10");
  if (options.warmup < 5) throw ConfigError("bench: warmup must be at least 5");
  if (options.batch < 1) throw ConfigError("bench: batch must be at least 1");
  std::vector<BenchRow> rows;
  for (std::int64_t d : options.dims)
    for (std::int64_t ctx : options.ctxs)
      for (AttentionKind kind : {AttentionKind::kSdpa, AttentionKind::kSuper})
        rows.push_back(bench_one(kind, d, ctx, options));
  return rows;
}

std::string format_bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << kBenchHeader << '\n';
  char buf[200];
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%.6f,%.6f,%lld\n", std::string(to_string(r.kind)).c_str(),
                  static_cast<long long>(r.d_model), static_cast<long long>(r.ctx_len), r.fwd_ms_median,
                  r.fwd_bwd_ms_median, static_cast<long long>(r.flops_model));
    out << buf;
  }
  return out.str();
}

std::optional<std::string> latency_disagreement(const std::vector<BenchRow>& rows, std::int64_t d,
                                                std::int64_t ctx) {
  const BenchRow* sdpa = nullptr;
  const BenchRow* super = nullptr;
  for (const BenchRow& r : rows) {
    if (r.d_model != d || r.ctx_len != ctx) continue;
    (r.kind == AttentionKind::kSdpa ? sdpa : super) = &r;
  }
  if (!sdpa || !super) return std::nullopt;
  const bool model_says_super = super->flops_model < sdpa->flops_model;
  const bool measured_super = super->fwd_ms_median <= sdpa->fwd_ms_median;
  if (model_says_super == measured_super) return std::nullopt;
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "warning: d=%lld ctx=%lld forward median super %.3f ms vs sdpa %.3f ms disagrees with the FLOP model",
                static_cast<long long>(d), static_cast<long long>(ctx), super->fwd_ms_median, sdpa->fwd_ms_median);
  return std::string(buf);
}

}  // namespace cct
