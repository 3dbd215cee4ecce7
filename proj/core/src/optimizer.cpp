#include "cct/optimizer.hpp"

#include <cmath>

#include "cct/errors.hpp"

namespace cct {

template <typename T>
AdamWState<T> make_adamw_state(const ParameterSet<T>& params) {
  AdamWState<T> state;
  for (const auto& [name, t] : params) {
    state.m.insert(name, Tensor<T>::zeros(t.shape()));
    state.v.insert(name, Tensor<T>::zeros(t.shape()));
  }
  return state;
}

bool is_norm_or_bias(const std::string& name) {
  auto ends_with = [&](std::string_view s) {
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  if (ends_with(".gamma") || ends_with(".beta") || ends_with(".b")) return true;
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf.size() == 3 && leaf[0] == 'b' && leaf[1] == '_';
}

template <typename T>
void adamw_step(ParameterSet<T>& params, AdamWState<T>& state, const AdamWHyper& hp) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adamw: optimizer state tracks " + std::to_string(state.m.size()) +
                     " tensors but there are " + std::to_string(params.size()) + " parameters");
  }
  for (const auto& [name, t] : params) {
    const Tensor<T>& m = state.m.at(name);
    const Tensor<T>& v = state.v.at(name);
    if (m.shape() != t.shape() || v.shape() != t.shape()) {
      throw ShapeError("adamw: state for '" + name + "' has shape " + to_string(m.shape()) +
                       " but the parameter is " + to_string(t.shape()));
    }
    if (!t.has_grad()) throw ContractError("adamw: parameter '" + name + "' has no gradient");
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(hp.beta1, t);
  const double bc2 = 1.0 - std::pow(hp.beta2, t);
  for (auto& [name, param] : params) {
    const double decay =
        hp.exempt_norms_and_biases && is_norm_or_bias(name) ? 0.0 : hp.weight_decay;
    auto theta = param.mutable_data();
    const auto g = param.grad();
    auto m = state.m.at(name).mutable_data();
    auto v = state.v.at(name).mutable_data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i];
      const double mi = hp.beta1 * m[i] + (1.0 - hp.beta1) * gi;
      const double vi = hp.beta2 * v[i] + (1.0 - hp.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      const double old = theta[i];
      theta[i] = static_cast<T>(old - hp.lr * m_hat / (std::sqrt(v_hat) + hp.eps) -
                                hp.lr * decay * old);
    }
  }
}

template AdamWState<float> make_adamw_state(const ParameterSet<float>&);
template AdamWState<double> make_adamw_state(const ParameterSet<double>&);
template void adamw_step(ParameterSet<float>&, AdamWState<float>&, const AdamWHyper&);
template void adamw_step(ParameterSet<double>&, AdamWState<double>&, const AdamWHyper&);

}  // namespace cct
