#include <benchmark/benchmark.h>

#include "cct/attention.hpp"
#include "cct/ops.hpp"
#include "cct/tape.hpp"

using namespace cct;

namespace {

AttentionConfig make(AttentionKind kind, std::int64_t d, std::int64_t L) {
  AttentionConfig c;
  c.kind = kind;
  c.d_model = d;
  c.n_heads = 4;
  c.ctx_len = L;
  return c;
}

Tensor<float> tokens(std::int64_t L, std::int64_t d, Rng& rng) {
  std::vector<float> v(static_cast<std::size_t>(L * d));
  for (float& x : v) x = static_cast<float>(rng.normal());
  return Tensor<float>(Shape{1, L, d}, std::move(v), true);
}

void set_counters(benchmark::State& state, const AttentionConfig& cfg) {
  const double flops = static_cast<double>(attention_flops(cfg).total());
  state.counters["flops_model"] = flops;
  state.counters["FLOP/s"] = benchmark::Counter(flops, benchmark::Counter::kIsIterationInvariantRate);
}

template <AttentionKind Kind>
void BM_AttentionForward(benchmark::State& state) {
  const auto cfg = make(Kind, state.range(0), state.range(1));
  Rng rng(1);
  const auto p = init_attention_params<float>(cfg, rng);
  const auto x = tokens(cfg.ctx_len, cfg.d_model, rng);
  NoGradScope<float> no_grad;
  for (auto _ : state) {
    const auto y = attention_forward(x, p, cfg);
    benchmark::DoNotOptimize(y.data().data());
  }
  set_counters(state, cfg);
}

template <AttentionKind Kind>
void BM_AttentionForwardBackward(benchmark::State& state) {
  const auto cfg = make(Kind, state.range(0), state.range(1));
  Rng rng(2);
  auto p = init_attention_params<float>(cfg, rng);
  for (auto& [name, t] : p.named()) t.set_requires_grad(true);
  const auto x = tokens(cfg.ctx_len, cfg.d_model, rng);
  for (auto _ : state) {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    const auto y = attention_forward(x, p, cfg);
    tape.backward(ops::sum(y));
    benchmark::DoNotOptimize(x.grad().data());
  }
}

// d in {128, 256, 512}, l in {64, 128, 256, 512}: both sides of l = d.
void Grid(benchmark::internal::Benchmark* b) {
  for (std::int64_t d : {128, 256, 512})
    for (std::int64_t L : {64, 128, 256, 512}) b->Args({d, L});
  b->ArgNames({"d", "l"})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_AttentionForward<AttentionKind::kSdpa>)->Apply(Grid);
BENCHMARK(BM_AttentionForward<AttentionKind::kSuper>)->Apply(Grid);
BENCHMARK(BM_AttentionForwardBackward<AttentionKind::kSdpa>)->Apply(Grid);
BENCHMARK(BM_AttentionForwardBackward<AttentionKind::kSuper>)->Apply(Grid);
