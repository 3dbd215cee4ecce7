#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "cct/tape.hpp"
#include "cct/tensor.hpp"

// Differentiable kernels. Every op computes its forward eagerly and, when a
// tape is active and some input requires grad, records its backward rule.
//
// Reductions (matmul, conv) accumulate each output element over the
// reduction axis in ascending order; results do not depend on blocking.
namespace cct::ops {

enum class Activation { kRelu, kGelu };

std::string_view to_string(Activation kind);
Activation parse_activation(std::string_view name);

// a: [..., m, k], b: [..., k, n] (or [..., n, k] when transpose_b).
// Leading batch dimensions must be equal or one side's must be a suffix of
// the other's; the shorter side is broadcast.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

// Same data, new shape with equal element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// [B, C, H, W] -> [B, H*W, C], spatial positions in row-major order.
template <typename T>
Tensor<T> spatial_to_tokens(const Tensor<T>& x);

// [B, L, H*Dh] <-> [B, H, L, Dh]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::int64_t n_heads);
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
// Exact x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x);

// Row-wise softmax over the last axis of scale * x.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, T scale = T(1));

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-5));

// x: [..., d_in], w: [d_in, d_out], b: [d_out] or undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {});

// Inverted dropout. p == 1 zeroes everything.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, std::uint64_t seed);

// Mean negative log-likelihood of `labels` under softmax(logits).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels);

// Cross-correlation; x: [B, Cin, H, W], w: [Cout, Cin, k, k], b: [Cout] or
// undefined. Output size must be an exact integer.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::int64_t stride, std::int64_t pad);

// Padded positions act as -inf. Output size uses floor division.
// Gradient goes to the first maximum in row-major window order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::int64_t kernel, std::int64_t stride,
                    std::int64_t pad);

std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                              std::int64_t pad);
std::int64_t pool_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                              std::int64_t pad);

// Negative control for gradient checking: while set, gelu's backward rule
// returns the negated derivative. Process-wide; never set outside tests.
void set_gelu_backward_fault(bool enabled) noexcept;
bool gelu_backward_fault() noexcept;

}  // namespace cct::ops
