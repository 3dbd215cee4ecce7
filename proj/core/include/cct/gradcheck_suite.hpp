#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cct {

struct GradCheckSuiteOptions {
  double tol = 1e-4;
  int instances = 100;  // random instances per op
  std::uint64_t seed = 0;
  // Flip the sign of gelu's backward rule for the duration of the run.
  bool inject_gelu_fault = false;
  // Restrict to these ops; empty runs all.
  std::vector<std::string> only;
};

struct GradCheckOpResult {
  std::string op;
  int instances = 0;
  std::int64_t coordinates = 0;
  double max_rel_error = 0.0;
  std::string worst_instance;  // description of the instance that produced max_rel_error
  bool passed = false;
};

struct GradCheckSuiteReport {
  double tol = 0.0;
  std::vector<GradCheckOpResult> ops;
  double seconds = 0.0;

  bool passed() const;
  std::vector<std::string> failures() const;
};

// Names of every op the suite covers, in run order.
const std::vector<std::string>& gradcheck_suite_ops();

GradCheckSuiteReport run_gradcheck_suite(const GradCheckSuiteOptions& options = {});

std::string format_gradcheck_report(const GradCheckSuiteReport& report);

}  // namespace cct
