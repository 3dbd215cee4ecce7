#include "gemm.hpp"

#include <cmath>

namespace cct::kernels {
namespace {

constexpr std::int64_t kMr = 4;
constexpr std::int64_t kMc = 64;
constexpr std::int64_t kKc = 256;

template <typename T>
constexpr std::int64_t kNr = 64 / sizeof(T) * 2;

// Full MR x NR tile. `ap` is packed [kc][MR].
template <typename T>
inline void micro_tile(std::int64_t kc, const T* __restrict ap, const T* __restrict bp,
                       std::int64_t ldb, T* __restrict c, std::int64_t ldc, bool load_c) {
  constexpr std::int64_t nr = kNr<T>;
  T acc[kMr][nr];
  if (load_c) {
    for (std::int64_t r = 0; r < kMr; ++r)
      for (std::int64_t j = 0; j < nr; ++j) acc[r][j] = c[r * ldc + j];
  } else {
    for (std::int64_t r = 0; r < kMr; ++r)
      for (std::int64_t j = 0; j < nr; ++j) acc[r][j] = T(0);
  }
  for (std::int64_t k = 0; k < kc; ++k) {
    const T* b = bp + k * ldb;
    for (std::int64_t r = 0; r < kMr; ++r) {
      const T a = ap[k * kMr + r];
      for (std::int64_t j = 0; j < nr; ++j) acc[r][j] = std::fma(a, b[j], acc[r][j]);
    }
  }
  for (std::int64_t r = 0; r < kMr; ++r)
    for (std::int64_t j = 0; j < nr; ++j) c[r * ldc + j] = acc[r][j];
}

// Partial tile with runtime extents. Same summation order and explicit fma
// in both paths, so a result never depends on which path produced it.
template <typename T>
inline void edge_tile(std::int64_t mr, std::int64_t nr, std::int64_t kc, const T* ap,
                      const T* bp, std::int64_t ldb, T* c, std::int64_t ldc, bool load_c) {
  for (std::int64_t r = 0; r < mr; ++r) {
    for (std::int64_t j = 0; j < nr; ++j) {
      T acc = load_c ? c[r * ldc + j] : T(0);
      for (std::int64_t k = 0; k < kc; ++k) acc = std::fma(ap[k * kMr + r], bp[k * ldb + j], acc);
      c[r * ldc + j] = acc;
    }
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t M, std::int64_t N, std::int64_t K,
          const T* A, const T* B, T* C, bool accumulate) {
  if (M <= 0 || N <= 0) return;
  if (K <= 0) {
    if (!accumulate) std::fill(C, C + M * N, T(0));
    return;
  }
  constexpr std::int64_t nr = kNr<T>;

  std::vector<T> b_packed;
  const T* bp = B;
  if (trans_b) {
    b_packed.resize(static_cast<std::size_t>(K * N));
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t k = 0; k < K; ++k) b_packed[k * N + n] = B[n * K + k];
    bp = b_packed.data();
  }

  std::vector<T> a_packed(static_cast<std::size_t>(((kMc + kMr - 1) / kMr) * kMr * kKc));
  for (std::int64_t k0 = 0; k0 < K; k0 += kKc) {
    const std::int64_t kc = std::min(kKc, K - k0);
    const bool load_c = accumulate || k0 > 0;
    for (std::int64_t i0 = 0; i0 < M; i0 += kMc) {
      const std::int64_t mc = std::min(kMc, M - i0);
      // Pack rows [i0, i0+mc) x cols [k0, k0+kc) into MR-row panels.
      for (std::int64_t p = 0; p < mc; p += kMr) {
        T* panel = a_packed.data() + (p / kMr) * kMr * kc;
        for (std::int64_t k = 0; k < kc; ++k) {
          for (std::int64_t r = 0; r < kMr; ++r) {
            const std::int64_t i = i0 + p + r;
            T v = T(0);
            if (p + r < mc) v = trans_a ? A[(k0 + k) * M + i] : A[i * K + (k0 + k)];
            panel[k * kMr + r] = v;
          }
        }
      }
      for (std::int64_t j0 = 0; j0 < N; j0 += nr) {
        const std::int64_t ncols = std::min(nr, N - j0);
        const T* bblock = bp + k0 * N + j0;
        for (std::int64_t p = 0; p < mc; p += kMr) {
          const std::int64_t mrows = std::min(kMr, mc - p);
          const T* panel = a_packed.data() + (p / kMr) * kMr * kc;
          T* cblock = C + (i0 + p) * N + j0;
          if (mrows == kMr && ncols == nr) {
            micro_tile<T>(kc, panel, bblock, N, cblock, N, load_c);
          } else {
            edge_tile<T>(mrows, ncols, kc, panel, bblock, N, cblock, N, load_c);
          }
        }
      }
    }
  }
}

template void gemm<float>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const double*,
                           const double*, double*, bool);

}  // namespace cct::kernels
