#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cct/attention.hpp"

namespace cct {

struct BenchOptions {
  std::vector<std::int64_t> dims{256, 512};
  std::vector<std::int64_t> ctxs{64, 128, 256};
  int iters = 10;
  int warmup = 5;
  std::int64_t batch = 1;
  std::int64_t n_heads = 4;
  std::uint64_t seed = 0;
};

struct BenchRow {
  AttentionKind kind = AttentionKind::kSdpa;
  std::int64_t d_model = 0;
  std::int64_t ctx_len = 0;
  double fwd_ms_median = 0.0;
  double fwd_bwd_ms_median = 0.0;
  std::int64_t flops_model = 0;  // attention_flops(...).total() per sequence
};

// Times one float attention layer per (d, ctx, kind), sdpa before super.
// Throws ConfigError when iters < 10 or warmup < 5.
std::vector<BenchRow> bench_attention(const BenchOptions& options);

inline constexpr std::string_view kBenchHeader = "kind,d,ctx_len,fwd_ms_median,fwd_bwd_ms_median,flops_model";
std::string format_bench_csv(const std::vector<BenchRow>& rows);

// Warning text when measured forward latency disagrees with the FLOP model
// at (d, ctx); nullopt when it agrees or the pair was not measured.
std::optional<std::string> latency_disagreement(const std::vector<BenchRow>& rows, std::int64_t d,
                                                std::int64_t ctx);

double median(std::vector<double> values);

}  // namespace cct
