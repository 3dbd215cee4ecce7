#include "cct/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "cct/errors.hpp"
#include "cct/random.hpp"
#include "gemm.hpp"

namespace cct::ops {
namespace {

using kernels::gemm;
using cct::to_string;

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

// Grad buffer of an input if it participates in backward, else nullptr.
template <typename T>
T* grad_target(TensorImpl<T>& t) {
  if (!t.requires_grad) return nullptr;
  t.ensure_grad();
  t.grad_live = true;
  return t.grad.data();
}

template <typename T>
void record(std::vector<ImplPtr<T>> inputs, const Tensor<T>& out,
            typename Tape<T>::BackwardFn fn) {
  active_tape<T>()->record(std::move(inputs), out, std::move(fn));
}

std::atomic<bool> g_gelu_fault{false};

std::size_t sz(std::int64_t n) { return static_cast<std::size_t>(n); }

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) +
                     " differ");
  }
}

template <typename T>
T gaussian_cdf(T x) {
  return T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gaussian_pdf(T x) {
  return std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
}

}  // namespace

void set_gelu_backward_fault(bool enabled) noexcept { g_gelu_fault.store(enabled); }
bool gelu_backward_fault() noexcept { return g_gelu_fault.load(); }

std::string_view to_string(Activation kind) {
  return kind == Activation::kRelu ? "relu" : "gelu";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "gelu") return Activation::kGelu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                              std::int64_t pad) {
  if (kernel <= 0 || stride <= 0 || pad < 0) {
    throw ConfigError("conv2d: kernel and stride must be positive and pad non-negative");
  }
  const std::int64_t span = in + 2 * pad - kernel;
  if (span < 0 || span % stride != 0) {
    throw ConfigError("conv2d: (" + std::to_string(in) + " + 2*" + std::to_string(pad) + " - " +
                      std::to_string(kernel) + ") / " + std::to_string(stride) +
                      " is not a non-negative integer");
  }
  return span / stride + 1;
}

std::int64_t pool_output_size(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                              std::int64_t pad) {
  if (kernel <= 0 || stride <= 0 || pad < 0) {
    throw ConfigError("maxpool2d: kernel and stride must be positive and pad non-negative");
  }
  if (2 * pad > kernel) throw ConfigError("maxpool2d: pad must be at most kernel / 2");
  const std::int64_t span = in + 2 * pad - kernel;
  if (span < 0) throw ConfigError("maxpool2d: window larger than padded input");
  return span / stride + 1;
}

// ---------------------------------------------------------------------------
// matmul

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::int64_t m = a.dim(-2), k = a.dim(-1);
  const std::int64_t kb = transpose_b ? b.dim(-1) : b.dim(-2);
  const std::int64_t n = transpose_b ? b.dim(-2) : b.dim(-1);
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ for " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + (transpose_b ? " (b transposed)" : ""));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  auto is_suffix = [](const Shape& shorter, const Shape& longer) {
    return shorter.size() <= longer.size() &&
           std::equal(shorter.rbegin(), shorter.rend(), longer.rbegin());
  };
  Shape out_batch;
  if (is_suffix(batch_b, batch_a)) {
    out_batch = batch_a;
  } else if (is_suffix(batch_a, batch_b)) {
    out_batch = batch_b;
  } else {
    throw ShapeError("matmul: batch dimensions of " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " do not broadcast");
  }
  const std::int64_t na = numel(batch_a), nb = numel(batch_b), nout = numel(out_batch);
  Shape out_shape = out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  const std::int64_t a_step = m * k, b_step = k * n, c_step = m * n;
  std::vector<T> out(sz(nout * c_step));
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  // An unbatched right operand lets the whole left batch run as one gemm.
  const bool fold = nb == 1;
  if (fold) {
    gemm<T>(false, transpose_b, na * m, n, k, ad, bd, out.data(), false);
  } else {
    for (std::int64_t i = 0; i < nout; ++i) {
      gemm<T>(false, transpose_b, m, n, k, ad + (i % na) * a_step, bd + (i % nb) * b_step,
              out.data() + i * c_step, false);
    }
  }
  Tensor<T> y(std::move(out_shape), std::move(out));
  if (detail::should_record<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    record<T>({ai, bi}, y, [=] {
      const T* dy = yi->grad.data();
      const T* av = ai->data.data();
      const T* bv = bi->data.data();
      if (T* da = grad_target(*ai)) {
        if (fold) {
          gemm<T>(false, !transpose_b, na * m, k, n, dy, bv, da, true);
        } else {
          for (std::int64_t i = 0; i < nout; ++i)
            gemm<T>(false, !transpose_b, m, k, n, dy + i * c_step, bv + (i % nb) * b_step,
                    da + (i % na) * a_step, true);
        }
      }
      if (T* db = grad_target(*bi)) {
        if (fold) {
          if (transpose_b) {
            gemm<T>(true, false, n, k, na * m, dy, av, db, true);
          } else {
            gemm<T>(true, false, k, n, na * m, av, dy, db, true);
          }
        } else {
          for (std::int64_t i = 0; i < nout; ++i) {
            const T* dyi = dy + i * c_step;
            const T* avi = av + (i % na) * a_step;
            T* dbi = db + (i % nb) * b_step;
            if (transpose_b) {
              gemm<T>(true, false, n, k, m, dyi, avi, dbi, true);
            } else {
              gemm<T>(true, false, k, n, m, avi, dyi, dbi, true);
            }
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// elementwise and structural

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Tensor<T> y(a.shape(), std::move(out));
  if (detail::should_record<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    record<T>({ai, bi}, y, [=] {
      const auto& dy = yi->grad;
      for (auto* t : {ai.get(), bi.get()}) {
        if (T* g = grad_target(*t))
          for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Tensor<T> y(a.shape(), std::move(out));
  if (detail::should_record<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), yi = y.impl();
    record<T>({ai, bi}, y, [=] {
      const auto& dy = yi->grad;
      if (T* g = grad_target(*ai))
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * bi->data[i];
      if (T* g = grad_target(*bi))
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * ai->data[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v *= factor;
  Tensor<T> y(x.shape(), std::move(out));
  if (detail::should_record<T>({&x})) {
    auto xi = x.impl(), yi = y.impl();
    record<T>({xi}, y, [=] {
      if (T* g = grad_target(*xi))
        for (std::size_t i = 0; i < yi->grad.size(); ++i) g[i] += factor * yi->grad[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  Tensor<T> y = Tensor<T>::scalar(acc);
  if (detail::should_record<T>({&x})) {
    auto xi = x.impl(), yi = y.impl();
    record<T>({xi}, y, [=] {
      if (T* g = grad_target(*xi)) {
        const T dy = yi->grad[0];
        for (std::size_t i = 0; i < xi->data.size(); ++i) g[i] += dy;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor<T> y(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (detail::should_record<T>({&x})) {
    auto xi = x.impl(), yi = y.impl();
    record<T>({xi}, y, [=] {
      if (T* g = grad_target(*xi))
        for (std::size_t i = 0; i < yi->grad.size(); ++i) g[i] += yi->grad[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> spatial_to_tokens(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("spatial_to_tokens: expected [B,C,H,W], got " + to_string(x.shape()));
  const std::int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> out(sz(B * HW * C));
  const T* xv = x.data().data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t p = 0; p < HW; ++p) out[sz((b * HW + p) * C + c)] = xv[(b * C + c) * HW + p];
  Tensor<T> y(Shape{B, HW, C}, std::move(out));
  if (detail::should_record<T>({&x})) {
    auto xi = x.impl(), yi = y.impl();
    record<T>({xi}, y, [=] {
      if (T* g = grad_target(*xi)) {
        const T* dy = yi->grad.data();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t p = 0; p < HW; ++p) g[(b * C + c) * HW + p] += dy[(b * HW + p) * C + c];
      }
    });
  }
  return y;
}

namespace {
// [B, L, H, Dh] <-> [B, H, L, Dh] index shuffle; forward when to_heads.
template <typename T>
void shuffle_heads(const T* src, T* dst, std::int64_t B, std::int64_t L, std::int64_t H,
                   std::int64_t Dh, bool to_heads, bool accumulate) {
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t l = 0; l < L; ++l)
      for (std::int64_t h = 0; h < H; ++h) {
        const std::int64_t tok = ((b * L + l) * H + h) * Dh;
        const std::int64_t head = ((b * H + h) * L + l) * Dh;
        const T* s = src + (to_heads ? tok : head);
        T* d = dst + (to_heads ? head : tok);
        for (std::int64_t j = 0; j < Dh; ++j) d[j] = accumulate ? d[j] + s[j] : s[j];
      }
}
}  // namespace

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::int64_t n_heads) {
  if (x.rank() != 3) throw ShapeError("split_heads: expected [B,L,D], got " + to_string(x.shape()));
  const std::int64_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
  if (n_heads <= 0 || D % n_heads != 0) {
    throw ShapeError("split_heads: width " + std::to_string(D) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  const std::int64_t Dh = D / n_heads;
  std::vector<T> out(sz(x.numel()));
  shuffle_heads(x.data().data(), out.data(), B, L, n_heads, Dh, true, false);
  Tensor<T> y(Shape{B, n_heads, L, Dh}, std::move(out));
  if (detail::should_record<T>({&x})) {
    auto xi = x.impl(), yi = y.impl();
    record<T>({xi}, y, [=] {
      if (T* g = grad_target(*xi)) shuffle_heads(yi->grad.data(), g, B, L, n_heads, Dh, false, true);
    });
  }
  return y;
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("merge_heads: expected [B,H,L,Dh], got " + to_string(x.shape()));
  const std::int64_t B = x.dim(0), H = x.dim(1), L = x.dim(2), Dh = x.dim(3);
  std::vector<T> out(sz(x.numel()));
  shuffle_heads(x.data().data(), out.data(), B, L, H, Dh, false, false);
  Tensor<T> y(Shape{B, L, H * Dh}, std::move(out));
  if (detail::should_record<T>({&x})) {
    auto xi = x.impl(), yi = y.impl();
    record<T>({xi}, y, [=] {
      if (T* g = grad_target(*xi)) shuffle_heads(yi->grad.data(), g, B, L, H, Dh, true, true);
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// activations

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v = v > T(0) ? v : T(0);
  Tensor<T> y(x.shape(), std::move(out));
  if (detail::should_record<T>({&x})) {
    auto xi = x.impl(), yi = y.impl();
    record<T>({xi}, y, [=] {
      if (T* g = grad_target(*xi))
        for (std::size_t i = 0; i < yi->grad.size(); ++i)
          if (xi->data[i] > T(0)) g[i] += yi->grad[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (T& v : out) v = v * gaussian_cdf(v);
  Tensor<T> y(x.shape(), std::move(out));
  if (detail::should_record<T>({&x})) {
    auto xi = x.impl(), yi = y.impl();
    record<T>({xi}, y, [=] {
      const T sign = g_gelu_fault.load() ? T(-1) : T(1);
      if (T* g = grad_target(*xi))
        for (std::size_t i = 0; i < yi->grad.size(); ++i) {
          const T v = xi->data[i];
          g[i] += sign * yi->grad[i] * (gaussian_cdf(v) + v * gaussian_pdf(v));
        }
    });
  }
  return y;
}

template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
  return kind == Activation::kRelu ? relu(x) : gelu(x);
}

// ---------------------------------------------------------------------------
// normalization

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, T scale) {
  const std::int64_t n = x.dim(-1);
  const std::int64_t rows = x.numel() / n;
  std::vector<T> out(sz(x.numel()));
  const T* xv = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = xv + r * n;
    T* o = out.data() + r * n;
    T mx = in[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
    T total = T(0);
    for (std::int64_t j = 0; j < n; ++j) {
      o[j] = std::exp(scale * (in[j] - mx));
      total += o[j];
    }
    const T inv = T(1) / total;
    for (std::int64_t j = 0; j < n; ++j) o[j] *= inv;
  }
  Tensor<T> y(x.shape(), std::move(out));
  if (detail::should_record<T>({&x})) {
    auto xi = x.impl(), yi = y.impl();
    record<T>({xi}, y, [=] {
      T* g = grad_target(*xi);
      if (!g) return;
      const T* yv = yi->data.data();
      const T* dy = yi->grad.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        const std::int64_t off = r * n;
        T dot = T(0);
        for (std::int64_t j = 0; j < n; ++j) dot += dy[off + j] * yv[off + j];
        for (std::int64_t j = 0; j < n; ++j) g[off + j] += scale * yv[off + j] * (dy[off + j] - dot);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::int64_t d = x.dim(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layernorm: gamma/beta " + to_string(gamma.shape()) + "/" +
                     to_string(beta.shape()) + " do not match last axis of " + to_string(x.shape()));
  }
  if (!(eps > T(0))) throw ConfigError("layernorm: eps must be positive");
  const std::int64_t rows = x.numel() / d;
  std::vector<T> out(sz(x.numel()));
  std::vector<T> xhat(sz(x.numel()));
  std::vector<T> rstd(sz(rows));
  const T* xv = x.data().data();
  const T* gv = gamma.data().data();
  const T* bv = beta.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = xv + r * d;
    T mean = T(0);
    for (std::int64_t j = 0; j < d; ++j) mean += in[j];
    mean /= T(d);
    T var = T(0);
    for (std::int64_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[sz(r)] = rs;
    for (std::int64_t j = 0; j < d; ++j) {
      const T h = (in[j] - mean) * rs;
      xhat[sz(r * d + j)] = h;
      out[sz(r * d + j)] = gv[j] * h + bv[j];
    }
  }
  Tensor<T> y(x.shape(), std::move(out));
  if (detail::should_record<T>({&x, &gamma, &beta})) {
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), yi = y.impl();
    record<T>({xi, gi, bi}, y,
              [=, xhat = std::move(xhat), rstd = std::move(rstd)] {
                const T* dy = yi->grad.data();
                if (T* gg = grad_target(*gi))
                  for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < d; ++j) gg[j] += dy[r * d + j] * xhat[sz(r * d + j)];
                if (T* gb = grad_target(*bi))
                  for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < d; ++j) gb[j] += dy[r * d + j];
                if (T* gx = grad_target(*xi)) {
                  const T* gam = gi->data.data();
                  for (std::int64_t r = 0; r < rows; ++r) {
                    T mean_dh = T(0), mean_dh_h = T(0);
                    for (std::int64_t j = 0; j < d; ++j) {
                      const T dh = dy[r * d + j] * gam[j];
                      mean_dh += dh;
                      mean_dh_h += dh * xhat[sz(r * d + j)];
                    }
                    mean_dh /= T(d);
                    mean_dh_h /= T(d);
                    for (std::int64_t j = 0; j < d; ++j) {
                      const T dh = dy[r * d + j] * gam[j];
                      gx[r * d + j] += rstd[sz(r)] * (dh - mean_dh - xhat[sz(r * d + j)] * mean_dh_h);
                    }
                  }
                }
              });
  }
  return y;
}

// ---------------------------------------------------------------------------
// linear, dropout, loss

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.rank() != 2 || x.dim(-1) != w.dim(0)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " +
                     to_string(w.shape()));
  }
  const std::int64_t din = w.dim(0), dout = w.dim(1);
  if (b.defined() && b.shape() != Shape{dout}) {
    throw ShapeError("linear: bias " + to_string(b.shape()) + " does not match weight " +
                     to_string(w.shape()));
  }
  const std::int64_t rows = x.numel() / din;
  std::vector<T> out(sz(rows * dout));
  gemm<T>(false, false, rows, dout, din, x.data().data(), w.data().data(), out.data(), false);
  if (b.defined()) {
    const T* bv = b.data().data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < dout; ++j) out[sz(r * dout + j)] += bv[j];
  }
  Shape shape = x.shape();
  shape.back() = dout;
  Tensor<T> y(std::move(shape), std::move(out));
  if (detail::should_record<T>({&x, &w, &b})) {
    auto xi = x.impl(), wi = w.impl(), yi = y.impl();
    auto bi = b.defined() ? b.impl() : ImplPtr<T>{};
    std::vector<ImplPtr<T>> inputs{xi, wi};
    if (bi) inputs.push_back(bi);
    record<T>(std::move(inputs), y, [=] {
      const T* dy = yi->grad.data();
      if (T* gx = grad_target(*xi)) gemm<T>(false, true, rows, din, dout, dy, wi->data.data(), gx, true);
      if (T* gw = grad_target(*wi)) gemm<T>(true, false, din, dout, rows, xi->data.data(), dy, gw, true);
      if (bi) {
        if (T* gb = grad_target(*bi))
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < dout; ++j) gb[j] += dy[r * dout + j];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, std::uint64_t seed) {
  if (p < 0.0 || p > 1.0) throw ConfigError("dropout: p must lie in [0, 1]");
  if (!training || p == 0.0) return x;
  Rng rng(seed);
  const T keep_scale = p < 1.0 ? T(1.0 / (1.0 - p)) : T(0);
  std::vector<T> mask(sz(x.numel()));
  for (T& m : mask) m = rng.uniform() < p ? T(0) : keep_scale;
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  Tensor<T> y(x.shape(), std::move(out));
  if (detail::should_record<T>({&x})) {
    auto xi = x.impl(), yi = y.impl();
    record<T>({xi}, y, [=, mask = std::move(mask)] {
      if (T* g = grad_target(*xi))
        for (std::size_t i = 0; i < mask.size(); ++i) g[i] += yi->grad[i] * mask[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: expected [B,C] logits, got " + to_string(logits.shape()));
  }
  const std::int64_t B = logits.dim(0), C = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != B) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(B));
  }
  for (std::int32_t l : labels) {
    if (l < 0 || l >= C) {
      throw IndexError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(C) + ")");
    }
  }
  const T* lv = logits.data().data();
  std::vector<T> probs(sz(B * C));
  T total = T(0);
  for (std::int64_t r = 0; r < B; ++r) {
    const T* row = lv + r * C;
    T mx = row[0];
    for (std::int64_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
    T s = T(0);
    for (std::int64_t j = 0; j < C; ++j) {
      probs[sz(r * C + j)] = std::exp(row[j] - mx);
      s += probs[sz(r * C + j)];
    }
    for (std::int64_t j = 0; j < C; ++j) probs[sz(r * C + j)] /= s;
    total += (mx + std::log(s)) - row[labels[sz(r)]];
  }
  Tensor<T> y = Tensor<T>::scalar(total / T(B));
  if (detail::should_record<T>({&logits})) {
    auto li = logits.impl(), yi = y.impl();
    std::vector<std::int32_t> lab(labels.begin(), labels.end());
    record<T>({li}, y, [=, probs = std::move(probs), lab = std::move(lab)] {
      T* g = grad_target(*li);
      if (!g) return;
      const T s = yi->grad[0] / T(B);
      for (std::int64_t r = 0; r < B; ++r)
        for (std::int64_t j = 0; j < C; ++j) {
          const T onehot = j == lab[sz(r)] ? T(1) : T(0);
          g[r * C + j] += s * (probs[sz(r * C + j)] - onehot);
        }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// convolution and pooling

namespace {

struct ConvGeom {
  std::int64_t cin, h, w, k, stride, pad, ho, wo;
};

// col: [cin*k*k, ho*wo]
template <typename T>
void im2col(const T* img, const ConvGeom& g, T* col) {
  const std::int64_t hw = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (std::int64_t ky = 0; ky < g.k; ++ky)
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        T* dst = col + ((c * g.k + ky) * g.k + kx) * hw;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            const bool inside = iy >= 0 && iy < g.h && ix >= 0 && ix < g.w;
            dst[oy * g.wo + ox] = inside ? img[(c * g.h + iy) * g.w + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* img) {
  const std::int64_t hw = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin; ++c)
    for (std::int64_t ky = 0; ky < g.k; ++ky)
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const T* src = col + ((c * g.k + ky) * g.k + kx) * hw;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            img[(c * g.h + iy) * g.w + ix] += src[oy * g.wo + ox];
          }
        }
      }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::int64_t stride,
                 std::int64_t pad) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3)) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(w.shape()));
  }
  const std::int64_t B = x.dim(0), cout = w.dim(0);
  if (b.defined() && b.shape() != Shape{cout}) {
    throw ShapeError("conv2d: bias " + to_string(b.shape()) + " does not match weight " +
                     to_string(w.shape()));
  }
  ConvGeom g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), stride, pad, 0, 0};
  g.ho = conv_output_size(g.h, g.k, stride, pad);
  g.wo = conv_output_size(g.w, g.k, stride, pad);
  const std::int64_t ckk = g.cin * g.k * g.k, hw = g.ho * g.wo;
  const std::int64_t in_step = g.cin * g.h * g.w, out_step = cout * hw;

  std::vector<T> out(sz(B * out_step));
  std::vector<T> col(sz(ckk * hw));
  for (std::int64_t n = 0; n < B; ++n) {
    im2col(x.data().data() + n * in_step, g, col.data());
    gemm<T>(false, false, cout, hw, ckk, w.data().data(), col.data(), out.data() + n * out_step, false);
    if (b.defined()) {
      for (std::int64_t c = 0; c < cout; ++c) {
        T* o = out.data() + n * out_step + c * hw;
        const T bc = b.data()[sz(c)];
        for (std::int64_t p = 0; p < hw; ++p) o[p] += bc;
      }
    }
  }
  Tensor<T> y(Shape{B, cout, g.ho, g.wo}, std::move(out));
  if (detail::should_record<T>({&x, &w, &b})) {
    auto xi = x.impl(), wi = w.impl(), yi = y.impl();
    auto bi = b.defined() ? b.impl() : ImplPtr<T>{};
    std::vector<ImplPtr<T>> inputs{xi, wi};
    if (bi) inputs.push_back(bi);
    record<T>(std::move(inputs), y, [=] {
      const T* dy = yi->grad.data();
      T* gx = grad_target(*xi);
      T* gw = grad_target(*wi);
      std::vector<T> colb(sz(ckk * hw));
      std::vector<T> dcol(gx ? sz(ckk * hw) : 0);
      for (std::int64_t n = 0; n < B; ++n) {
        const T* dyn = dy + n * out_step;
        if (gw) {
          im2col(xi->data.data() + n * in_step, g, colb.data());
          gemm<T>(false, true, cout, ckk, hw, dyn, colb.data(), gw, true);
        }
        if (gx) {
          gemm<T>(true, false, ckk, hw, cout, wi->data.data(), dyn, dcol.data(), false);
          col2im_add(dcol.data(), g, gx + n * in_step);
        }
      }
      if (bi) {
        if (T* gb = grad_target(*bi))
          for (std::int64_t n = 0; n < B; ++n)
            for (std::int64_t c = 0; c < cout; ++c) {
              const T* d = dy + n * out_step + c * hw;
              for (std::int64_t p = 0; p < hw; ++p) gb[c] += d[p];
            }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::int64_t kernel, std::int64_t stride, std::int64_t pad) {
  if (x.rank() != 4) throw ShapeError("maxpool2d: expected [B,C,H,W], got " + to_string(x.shape()));
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t ho = pool_output_size(H, kernel, stride, pad);
  const std::int64_t wo = pool_output_size(W, kernel, stride, pad);
  std::vector<T> out(sz(B * C * ho * wo));
  std::vector<std::int64_t> argmax(out.size());
  const T* xv = x.data().data();
  for (std::int64_t plane = 0; plane < B * C; ++plane) {
    const T* in = xv + plane * H * W;
    for (std::int64_t oy = 0; oy < ho; ++oy)
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t best_idx = -1;
        for (std::int64_t ky = 0; ky < kernel; ++ky) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (std::int64_t kx = 0; kx < kernel; ++kx) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            const T v = in[iy * W + ix];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = plane * H * W + iy * W + ix;
            }
          }
        }
        const std::int64_t o = (plane * ho + oy) * wo + ox;
        out[sz(o)] = best;
        argmax[sz(o)] = best_idx;
      }
  }
  Tensor<T> y(Shape{B, C, ho, wo}, std::move(out));
  if (detail::should_record<T>({&x})) {
    auto xi = x.impl(), yi = y.impl();
    record<T>({xi}, y, [=, argmax = std::move(argmax)] {
      if (T* g = grad_target(*xi))
        for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += yi->grad[o];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------

#define CCT_INSTANTIATE_OPS(T)                                                                \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, bool);                        \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                              \
  template Tensor<T> sum(const Tensor<T>&);                                                   \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
  template Tensor<T> spatial_to_tokens(const Tensor<T>&);                                     \
  template Tensor<T> split_heads(const Tensor<T>&, std::int64_t);                             \
  template Tensor<T> merge_heads(const Tensor<T>&);                                           \
  template Tensor<T> relu(const Tensor<T>&);                                                  \
  template Tensor<T> gelu(const Tensor<T>&);                                                  \
  template Tensor<T> activation(Activation, const Tensor<T>&);                                \
  template Tensor<T> softmax_rows(const Tensor<T>&, T);                                       \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);      \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, std::uint64_t);                  \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>);          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                            std::int64_t, std::int64_t);                                      \
  template Tensor<T> maxpool2d(const Tensor<T>&, std::int64_t, std::int64_t, std::int64_t);

CCT_INSTANTIATE_OPS(float)
CCT_INSTANTIATE_OPS(double)

#undef CCT_INSTANTIATE_OPS

}  // namespace cct::ops
