#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cct/model.hpp"

namespace cct {

// Parameter counts of the same architecture under both attention kinds.
struct ParamReport {
  ModelConfig config;
  ParamBreakdown sdpa;
  ParamBreakdown super;
  double attention_ratio = 0.0;  // super / sdpa, one attention layer
  double total_ratio = 0.0;      // super / sdpa, whole model
};

ParamReport param_report(const ModelConfig& cfg);

std::string format_param_report_text(const ParamReport& report);
// Columns: component,sdpa,super,ratio
std::string format_param_report_csv(const ParamReport& report);

}  // namespace cct
