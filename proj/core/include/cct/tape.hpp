#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "cct/tensor.hpp"

namespace cct {

// Ordered record of differentiable operations. Entries are appended in
// execution order, so every entry's inputs were produced by earlier entries
// or are leaves. One backward traversal walks the entries in reverse.
template <typename T>
class Tape {
 public:
  // A backward rule reads the output's grad and accumulates into the grads
  // of the inputs that require them.
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  // Registers `output` as produced from `inputs`. Marks output as
  // requiring grad and assigns its node id.
  void record(std::vector<std::shared_ptr<TensorImpl<T>>> inputs,
              const Tensor<T>& output, BackwardFn backward);

  // Populates grads of every requires_grad leaf reachable from `loss`.
  // Leaf grads accumulate across calls; intermediate grads are reset.
  void backward(const Tensor<T>& loss);

  std::size_t size() const noexcept { return entries_.size(); }
  void clear();

  struct Entry {
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
    std::shared_ptr<TensorImpl<T>> output;
    BackwardFn backward;
  };
  const std::vector<Entry>& entries() const noexcept { return entries_; }

 private:
  std::vector<Entry> entries_;
};

extern template class Tape<float>;
extern template class Tape<double>;

// The tape operations record onto in the current thread, or nullptr when
// gradients are not being tracked.
template <typename T>
Tape<T>* active_tape() noexcept;

// Installs a tape as the thread's active tape for the lifetime of the scope.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  ~TapeScope();

 private:
  Tape<T>* previous_;
};

// Suspends recording for the lifetime of the scope (evaluation passes).
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
  ~NoGradScope();

 private:
  Tape<T>* previous_;
};

// Runs backward on the thread's active tape.
template <typename T>
void backward(const Tensor<T>& loss);

namespace detail {
template <typename T>
Tape<T>*& active_tape_slot() noexcept;

// True when an op with these inputs should be recorded.
template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (active_tape<T>() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}
}  // namespace detail

}  // namespace cct
