#include "cct/param_report.hpp"

#include <cstdio>
#include <sstream>

namespace cct {
namespace {

struct Line {
  const char* component;
  std::int64_t sdpa;
  std::int64_t super;
};

std::vector<Line> lines(const ParamReport& r) {
  const std::int64_t L = r.config.n_layers;
  return {
      {"tokenizer", r.sdpa.tokenizer, r.super.tokenizer},
      {"attention_per_layer", r.sdpa.per_layer_attention, r.super.per_layer_attention},
      {"attention_all_layers", L * r.sdpa.per_layer_attention, L * r.super.per_layer_attention},
      {"mlp_all_layers", L * r.sdpa.per_layer_mlp, L * r.super.per_layer_mlp},
      {"norms", r.sdpa.norms, r.super.norms},
      {"seqpool", r.sdpa.seqpool, r.super.seqpool},
      {"head", r.sdpa.head, r.super.head},
      {"total", r.sdpa.total, r.super.total},
  };
}

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ParamReport param_report(const ModelConfig& cfg) {
  ParamReport r;
  r.config = cfg;
  ModelConfig s = cfg;
  s.attention = AttentionKind::kSdpa;
  r.sdpa = model_param_count(s);
  s.attention = AttentionKind::kSuper;
  r.super = model_param_count(s);
  r.attention_ratio = ratio(r.super.per_layer_attention, r.sdpa.per_layer_attention);
  r.total_ratio = ratio(r.super.total, r.sdpa.total);
  return r;
}

std::string format_param_report_text(const ParamReport& r) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "d_model=%lld ctx_len=%lld layers=%lld heads=%lld mixing=%s\n",
                static_cast<long long>(r.config.d_model), static_cast<long long>(r.config.ctx_len()),
                static_cast<long long>(r.config.n_layers), static_cast<long long>(r.config.n_heads),
                std::string(to_string(r.config.mixing_scope)).c_str());
  out << buf;
  std::snprintf(buf, sizeof buf, "%-22s %14s %14s %9s\n", "component", "sdpa", "super", "ratio");
  out << buf;
  for (const Line& l : lines(r)) {
    std::snprintf(buf, sizeof buf, "%-22s %14lld %14lld %9.6f\n", l.component, static_cast<long long>(l.sdpa),
                  static_cast<long long>(l.super), ratio(l.super, l.sdpa));
    out << buf;
  }
  return out.str();
}

std::string format_param_report_csv(const ParamReport& r) {
  std::ostringstream out;
  out << "component,sdpa,super,ratio\n";
  char buf[160];
  for (const Line& l : lines(r)) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%.17g\n", l.component, static_cast<long long>(l.sdpa),
                  static_cast<long long>(l.super), ratio(l.super, l.sdpa));
    out << buf;
  }
  return out.str();
}

}  // namespace cct
