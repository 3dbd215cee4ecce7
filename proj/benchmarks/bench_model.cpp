#include <benchmark/benchmark.h>

#include "cct/model.hpp"
#include "cct/ops.hpp"
#include "cct/optimizer.hpp"
#include "cct/tape.hpp"

using namespace cct;

namespace {

Tensor<float> images(std::int64_t B, Rng& rng) {
  std::vector<float> v(static_cast<std::size_t>(B * 3 * 32 * 32));
  for (float& x : v) x = static_cast<float>(rng.normal());
  return Tensor<float>(Shape{B, 3, 32, 32}, std::move(v));
}

ModelConfig config(AttentionKind kind, std::int64_t d) {
  ModelConfig m;
  m.d_model = d;
  m.attention = kind;
  return m;
}

// One optimizer step of CCT-6/3x1 on a batch of 8, at width 128 and 256.
template <AttentionKind Kind>
void BM_TrainStep(benchmark::State& state) {
  const auto cfg = config(Kind, state.range(0));
  auto params = init_params<float>(cfg, 1);
  auto adam = make_adamw_state(params);
  Rng rng(1);
  const auto x = images(8, rng);
  std::vector<std::int32_t> labels(8);
  for (auto& y : labels) y = static_cast<std::int32_t>(rng.below(100));
  for (auto _ : state) {
    params.zero_grad();
    Tape<float> tape;
    TapeScope<float> scope(tape);
    tape.backward(ops::cross_entropy(forward(x, params, cfg, true), labels));
    adamw_step(params, adam, AdamWHyper{});
  }
  state.SetItemsProcessed(state.iterations() * 8);
}

template <AttentionKind Kind>
void BM_Inference(benchmark::State& state) {
  const auto cfg = config(Kind, state.range(0));
  const auto params = init_params<float>(cfg, 1);
  Rng rng(2);
  const auto x = images(32, rng);
  NoGradScope<float> no_grad;
  for (auto _ : state) {
    const auto logits = forward(x, params, cfg);
    benchmark::DoNotOptimize(logits.data().data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}

}  // namespace

BENCHMARK(BM_TrainStep<AttentionKind::kSdpa>)->Arg(128)->Arg(256)->ArgName("d")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStep<AttentionKind::kSuper>)->Arg(128)->Arg(256)->ArgName("d")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Inference<AttentionKind::kSdpa>)->Arg(128)->Arg(256)->ArgName("d")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Inference<AttentionKind::kSuper>)->Arg(128)->Arg(256)->ArgName("d")->Unit(benchmark::kMillisecond);
