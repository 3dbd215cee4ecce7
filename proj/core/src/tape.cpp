#include "cct/tape.hpp"

#include <algorithm>

#include "cct/errors.hpp"

namespace cct {

template <typename T>
Tape<T>::~Tape() {
  clear();
}

template <typename T>
void Tape<T>::clear() {
  for (auto& e : entries_) {
    if (e.output && e.output->tape == this) {
      e.output->node_id = -1;
      e.output->tape = nullptr;
    }
  }
  entries_.clear();
}

template <typename T>
void Tape<T>::record(std::vector<std::shared_ptr<TensorImpl<T>>> inputs,
                     const Tensor<T>& output, BackwardFn backward) {
  auto& impl = output.impl();
  impl->requires_grad = true;
  impl->node_id = static_cast<std::int64_t>(entries_.size());
  impl->tape = this;
  entries_.push_back(Entry{std::move(inputs), impl, std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  const auto& root = loss.impl();
  if (root->tape != this || root->node_id < 0 ||
      root->node_id >= static_cast<std::int64_t>(entries_.size())) {
    throw ContractError("backward: loss was not produced on this tape");
  }
  const auto last = static_cast<std::size_t>(root->node_id);
  for (std::size_t i = 0; i <= last; ++i) {
    auto& out = *entries_[i].output;
    out.grad.clear();
    out.grad_live = false;
  }
  root->ensure_grad();
  root->grad[0] = T(1);
  root->grad_live = true;
  for (std::size_t i = last + 1; i-- > 0;) {
    Entry& e = entries_[i];
    if (!e.output->grad_live) continue;
    e.backward();
  }
}

template class Tape<float>;
template class Tape<double>;

namespace detail {
template <typename T>
Tape<T>*& active_tape_slot() noexcept {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}
template Tape<float>*& active_tape_slot<float>() noexcept;
template Tape<double>*& active_tape_slot<double>() noexcept;
}  // namespace detail

template <typename T>
Tape<T>* active_tape() noexcept {
  return detail::active_tape_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(detail::active_tape_slot<T>()) {
  detail::active_tape_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  detail::active_tape_slot<T>() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(detail::active_tape_slot<T>()) {
  detail::active_tape_slot<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  detail::active_tape_slot<T>() = previous_;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) throw ContractError("backward called with no active tape");
  tape->backward(loss);
}

template Tape<float>* active_tape<float>() noexcept;
template Tape<double>* active_tape<double>() noexcept;
template class TapeScope<float>;
template class TapeScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace cct
