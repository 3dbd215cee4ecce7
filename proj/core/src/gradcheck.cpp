#include "cct/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cct/errors.hpp"
#include "cct/ops.hpp"
#include "cct/random.hpp"
#include "cct/tape.hpp"

namespace cct {
namespace {

double project(const Tensor<double>& y, const std::vector<double>& r) {
  double acc = 0.0;
  const auto v = y.data();
  for (std::size_t i = 0; i < r.size(); ++i) acc += v[i] * r[i];
  return acc;
}

}  // namespace

GradCheckResult grad_check(const GradCheckFn& fn, std::vector<Tensor<double>> point,
                           const GradCheckOptions& options) {
  for (auto& t : point) {
    t = t.detach();
    t.set_requires_grad(true);
  }

  std::vector<double> r;
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> y = fn(point);
    Rng rng(options.projection_seed);
    r.resize(static_cast<std::size_t>(y.numel()));
    for (double& v : r) v = rng.normal();
    Tensor<double> proj(y.shape(), r);
    Tensor<double> loss = ops::sum(ops::mul(y, proj));
    tape.backward(loss);
  }

  GradCheckResult result;
  NoGradScope<double> no_grad;
  const double h = options.step;
  for (std::size_t i = 0; i < point.size(); ++i) {
    Tensor<double>& t = point[i];
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(static_cast<std::size_t>(t.numel()), 0.0);
    auto data = t.mutable_data();
    for (std::int64_t j = 0; j < t.numel(); ++j) {
      const double saved = data[j];
      data[j] = saved + h;
      const double plus = project(fn(point), r);
      data[j] = saved - h;
      const double minus = project(fn(point), r);
      data[j] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[static_cast<std::size_t>(j)];
      const double denom =
          std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      double err = std::abs(a - numeric) / denom;
      if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
      ++result.coordinates;
      if (result.worst_index < 0 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = i;
        result.worst_index = j;
      }
    }
  }
  return result;
}

}  // namespace cct
