#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

namespace cct::kernels {

// C[M x N] = (accumulate ? C : 0) + op(A) * op(B), all row-major.
// A is [M x K] ([K x M] when trans_a); B is [K x N] ([N x K] when trans_b).
// Every output element sums its K products in ascending k order.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t M, std::int64_t N, std::int64_t K,
          const T* A, const T* B, T* C, bool accumulate);

extern template void gemm<float>(bool, bool, std::int64_t, std::int64_t, std::int64_t,
                                 const float*, const float*, float*, bool);
extern template void gemm<double>(bool, bool, std::int64_t, std::int64_t, std::int64_t,
                                  const double*, const double*, double*, bool);

}  // namespace cct::kernels
