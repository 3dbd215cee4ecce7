#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cct/tensor.hpp"

namespace cct {

// A differentiable function of one or more 64-bit tensors.
using GradCheckFn = std::function<Tensor<double>(std::span<const Tensor<double>>)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor so coordinates with near-zero derivative are compared
  // on an absolute scale.
  double denominator_floor = 1e-4;
  std::uint64_t projection_seed = 0x5eed;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::int64_t worst_index = -1;
  std::int64_t coordinates = 0;
};

// Compares reverse-mode gradients of <r, fn(point)> for a random projection r
// against central differences, coordinate by coordinate, over every input.
GradCheckResult grad_check(const GradCheckFn& fn, std::vector<Tensor<double>> point,
                           const GradCheckOptions& options = {});

}  // namespace cct
