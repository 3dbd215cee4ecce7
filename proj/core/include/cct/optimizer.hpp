#pragma once

#include <cstdint>

#include "cct/model.hpp"

namespace cct {

// AdamW with decoupled weight decay and a constant learning rate.
struct AdamWHyper {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  // Skip decay for biases and layernorm parameters.
  bool exempt_norms_and_biases = false;

  bool operator==(const AdamWHyper&) const = default;
};

template <typename T>
struct AdamWState {
  std::int64_t step = 0;
  ParameterSet<T> m;  // first moments, same names/shapes as the parameters
  ParameterSet<T> v;  // second moments
};

template <typename T>
AdamWState<T> make_adamw_state(const ParameterSet<T>& params);

// True for parameters exempted by AdamWHyper::exempt_norms_and_biases.
bool is_norm_or_bias(const std::string& name);

// One update from the grads stored on `params`:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
template <typename T>
void adamw_step(ParameterSet<T>& params, AdamWState<T>& state, const AdamWHyper& hp);

}  // namespace cct
