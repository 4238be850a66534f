#pragma once

// Differentiable ops. Every op computes its forward value eagerly and
// registers a backward rule that accumulates into the inputs' gradients.

#include <cblas.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <string>
#include <vector>

#include "pixl/ad/tensor.hpp"
#include "pixl/imgcore.hpp"

namespace pixl::ad {

namespace detail {

// Row-major C(M×N) = alpha·op(A)·op(B) + beta·C.
inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, const float* b,
                 float beta, float* c) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, a, ta ? m : k, b, tb ? k : n, beta, c, n);
}
inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, const double* b,
                 double beta, double* c) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, a, ta ? m : k, b, tb ? k : n, beta, c, n);
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (size_t i = 0; i < n; ++i) {
    const int da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const int db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1)
      throw Error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `s` viewed inside `out`, zero along broadcast axes.
inline std::vector<size_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<size_t> st(out.size(), 0);
  size_t stride = 1;
  for (int i = int(s.size()) - 1; i >= 0; --i) {
    const size_t oi = out.size() - s.size() + size_t(i);
    st[oi] = s[size_t(i)] == 1 ? 0 : stride;
    stride *= size_t(s[size_t(i)]);
  }
  return st;
}

// Maps every flat output index to the flat index of `s` it reads from.
inline std::vector<size_t> broadcast_index(const Shape& s, const Shape& out) {
  const size_t n = numel(out);
  std::vector<size_t> idx(n);
  if (s == out) {
    std::iota(idx.begin(), idx.end(), size_t(0));
    return idx;
  }
  const auto st = broadcast_strides(s, out);
  std::vector<int> counter(out.size(), 0);
  size_t cur = 0;
  for (size_t i = 0; i < n; ++i) {
    idx[i] = cur;
    for (int d = int(out.size()) - 1; d >= 0; --d) {
      if (++counter[size_t(d)] < out[size_t(d)]) {
        cur += st[size_t(d)];
        break;
      }
      cur -= st[size_t(d)] * size_t(out[size_t(d)] - 1);
      counter[size_t(d)] = 0;
    }
  }
  return idx;
}

enum class BinOp { add, sub, mul };

// True when `s` (leading 1s ignored) equals the trailing dimensions of `out`,
// so that flat index i of `out` reads element i % numel(s).
inline bool is_suffix(const Shape& s, const Shape& out) {
  size_t lead = 0;
  while (lead < s.size() && s[lead] == 1) ++lead;
  const size_t k = s.size() - lead;
  if (k > out.size()) return false;
  return std::equal(s.begin() + long(lead), s.end(), out.end() - long(k));
}

// Index maps for the two operands: identity, modulo (suffix broadcast), or an
// explicit table for the general case.
struct OperandIndex {
  enum Kind { identity, modulo, table } kind = identity;
  size_t mod = 1;
  std::vector<size_t> tab;

  OperandIndex(const Shape& s, const Shape& out) {
    if (s == out) return;
    if (is_suffix(s, out)) {
      kind = modulo;
      mod = numel(s);
    } else {
      kind = table;
      tab = broadcast_index(s, out);
    }
  }
  size_t operator()(size_t i) const { return kind == identity ? i : kind == modulo ? i % mod : tab[i]; }
};

template <typename F>
void for_each_pair(size_t n, const OperandIndex& ia, const OperandIndex& ib, F f) {
  if (ia.kind == OperandIndex::identity && ib.kind == OperandIndex::identity) {
    for (size_t i = 0; i < n; ++i) f(i, i, i);
  } else if (ia.kind == OperandIndex::identity && ib.kind == OperandIndex::modulo) {
    const size_t m = ib.mod;
    for (size_t o = 0; o < n; o += m)
      for (size_t j = 0; j < m; ++j) f(o + j, o + j, j);
  } else if (ia.kind == OperandIndex::modulo && ib.kind == OperandIndex::identity) {
    const size_t m = ia.mod;
    for (size_t o = 0; o < n; o += m)
      for (size_t j = 0; j < m; ++j) f(o + j, j, o + j);
  } else {
    for (size_t i = 0; i < n; ++i) f(i, ia(i), ib(i));
  }
}

inline Tensor binary(BinOp kind, const Tensor& a, const Tensor& b) {
  static const char* names[] = {"add", "sub", "mul"};
  const char* name = names[int(kind)];
  const Shape out = broadcast_shape(a.shape(), b.shape(), name);
  const size_t n = numel(out);
  std::vector<real> v(n);
  const real* pa = a.data().data();
  const real* pb = b.data().data();
  auto ia = std::make_shared<OperandIndex>(a.shape(), out);
  auto ib = std::make_shared<OperandIndex>(b.shape(), out);
  switch (kind) {
    case BinOp::add: for_each_pair(n, *ia, *ib, [&](size_t i, size_t j, size_t k) { v[i] = pa[j] + pb[k]; }); break;
    case BinOp::sub: for_each_pair(n, *ia, *ib, [&](size_t i, size_t j, size_t k) { v[i] = pa[j] - pb[k]; }); break;
    case BinOp::mul: for_each_pair(n, *ia, *ib, [&](size_t i, size_t j, size_t k) { v[i] = pa[j] * pb[k]; }); break;
  }
  return make_result(name, out, std::move(v), {a, b}, [kind, ia, ib](TensorImpl& self) {
    const real* g = self.grad.data();
    const real* xa = self.inputs[0]->value.data();
    const real* xb = self.inputs[1]->value.data();
    real* ga = grad_of(self, 0);
    real* gb = grad_of(self, 1);
    const size_t n = self.value.size();
    const real sb = kind == BinOp::sub ? -1.f : 1.f;
    if (kind == BinOp::mul) {
      if (ga) for_each_pair(n, *ia, *ib, [&](size_t i, size_t j, size_t k) { ga[j] += g[i] * xb[k]; });
      if (gb) for_each_pair(n, *ia, *ib, [&](size_t i, size_t j, size_t k) { gb[k] += g[i] * xa[j]; });
    } else {
      if (ga) for_each_pair(n, *ia, *ib, [&](size_t i, size_t j, size_t) { ga[j] += g[i]; });
      if (gb) for_each_pair(n, *ia, *ib, [&](size_t i, size_t, size_t k) { gb[k] += sb * g[i]; });
    }
  });
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename F, typename DF>
Tensor unary(const char* name, const Tensor& a, F f, DF df) {
  std::vector<real> v(a.numel());
  const real* x = a.data().data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = f(x[i]);
  return make_result(name, a.shape(), std::move(v), {a}, [df](TensorImpl& self) {
    real* gx = grad_of(self, 0);
    if (!gx) return;
    const real* x = self.inputs[0]->value.data();
    const real* y = self.value.data();
    const real* g = self.grad.data();
    for (size_t i = 0; i < self.value.size(); ++i) gx[i] += g[i] * df(x[i], y[i]);
  });
}

inline int norm_axis(int axis, int ndim) {
  const int a = axis < 0 ? axis + ndim : axis;
  require(a >= 0 && a < ndim, "axis " + std::to_string(axis) + " out of range");
  return a;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(detail::BinOp::mul, a, b); }

inline Tensor scale(const Tensor& a, real s) {
  return detail::unary("scale", a, [s](real x) { return s * x; }, [s](real, real) { return s; });
}
inline Tensor add_scalar(const Tensor& a, real s) {
  return detail::unary("add_scalar", a, [s](real x) { return x + s; }, [](real, real) { return 1.f; });
}
inline Tensor relu(const Tensor& a) {
  return detail::unary("relu", a, [](real x) { return x > 0 ? x : 0.f; },
                       [](real x, real) { return x > 0 ? 1.f : 0.f; });
}
namespace detail {
// exp for x <= 0 via 2^k·poly(r), |r| <= ln2/2; relative error ~2e-7. Plain
// arithmetic so the GELU loop vectorizes (with -fno-trapping-math).
inline float exp_nonpositive(float x) {
  x = x < -87.f ? -87.f : x;
  const float k = std::floor(x * 1.44269504088896341f + 0.5f);
  const float r = (x - k * 0.693145751953125f) - k * 1.428606765330187e-06f;
  const float p =
      1.f + r * (1.f + r * (0.5f + r * (1.f / 6 + r * (1.f / 24 + r * (1.f / 120 + r * (1.f / 720))))));
  return p * std::bit_cast<float>((int32_t(k) + 127) << 23);
}

// Φ(x) through the Abramowitz-Stegun 7.1.26 erf (|err| < 1.5e-7), plus the
// normal density, which shares the same exponential.
inline void gelu_kernel(const float* __restrict x, float* __restrict y, float* __restrict cdf,
                        float* __restrict pdf, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const float xi = x[i];
    const float t = 1.f / (1.f + 0.3275911f * 0.70710678118654752f * std::abs(xi));
    const float e = exp_nonpositive(-0.5f * xi * xi);  // exp(-z^2) with z = |x|/sqrt(2)
    const float poly =
        t * (0.254829592f + t * (-0.284496736f + t * (1.421413741f + t * (-1.453152027f + t * 1.061405429f))));
    const float c = 0.5f + 0.5f * std::copysign(1.f - poly * e, xi);
    cdf[i] = c;
    pdf[i] = 0.39894228040143268f * e;
    y[i] = xi * c;
  }
}
}  // namespace detail

/// GELU x·Φ(x).
inline Tensor gelu(const Tensor& a) {
  const size_t n = a.numel();
  std::vector<real> v(n), cdf(n), pdf(n);
#ifdef PIXL_AD_DOUBLE
  const real* x = a.data().data();
  for (size_t i = 0; i < n; ++i) {
    cdf[i] = 0.5 * (1 + std::erf(x[i] * 0.70710678118654752));
    pdf[i] = 0.39894228040143268 * std::exp(-0.5 * x[i] * x[i]);
    v[i] = x[i] * cdf[i];
  }
#else
  detail::gelu_kernel(a.data().data(), v.data(), cdf.data(), pdf.data(), n);
#endif
  return detail::make_result("gelu", a.shape(), std::move(v), {a},
                             [cdf = std::move(cdf), pdf = std::move(pdf)](TensorImpl& self) {
                               real* gx = detail::grad_of(self, 0);
                               if (!gx) return;
                               const real* x = self.inputs[0]->value.data();
                               const real* g = self.grad.data();
                               for (size_t i = 0; i < cdf.size(); ++i) gx[i] += g[i] * (cdf[i] + x[i] * pdf[i]);
                             });
}
inline Tensor sigmoid(const Tensor& a) {
  return detail::unary("sigmoid", a, [](real x) { return 1.f / (1.f + std::exp(-x)); },
                       [](real, real y) { return y * (1.f - y); });
}
inline Tensor abs(const Tensor& a) {
  return detail::unary("abs", a, [](real x) { return std::abs(x); },
                       [](real x, real) { return x > 0 ? 1.f : x < 0 ? -1.f : 0.f; });
}
// Gradient passes wherever lo <= x <= hi, zero where saturated.
inline Tensor clip(const Tensor& a, real lo, real hi) {
  return detail::unary("clip", a, [lo, hi](real x) { return std::clamp(x, lo, hi); },
                       [lo, hi](real x, real) { return x >= lo && x <= hi ? 1.f : 0.f; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double acc = 0;
  for (real v : a.data()) acc += v;
  return detail::make_result("sum", {1}, {real(acc)}, {a}, [](TensorImpl& self) {
    real* gx = detail::grad_of(self, 0);
    if (!gx) return;
    const real g = self.grad[0];
    for (size_t i = 0; i < self.inputs[0]->value.size(); ++i) gx[i] += g;
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.f / real(a.numel())); }

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
  int infer = -1;
  size_t known = 1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      require(infer < 0, "reshape: more than one -1");
      infer = int(i);
    } else {
      known *= size_t(shape[i]);
    }
  }
  if (infer >= 0) shape[size_t(infer)] = int(a.numel() / std::max<size_t>(known, 1));
  require(numel(shape) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  return detail::make_result("reshape", shape, a.values(), {a}, [](TensorImpl& self) {
    real* gx = detail::grad_of(self, 0);
    if (!gx) return;
    for (size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

namespace detail {
// Walks the output of a permutation in order, calling f(out_offset, in_offset)
// for each contiguous run of the innermost output axis.
template <typename F>
void permute_walk(const Shape& out, const std::vector<size_t>& st, F f) {
  const int nd = int(out.size());
  const size_t inner = size_t(out.back()), total = numel(out);
  std::vector<int> counter(static_cast<size_t>(nd), 0);
  size_t cur = 0;
  for (size_t o = 0; o < total; o += inner) {
    f(o, cur);
    for (int d = nd - 2; d >= 0; --d) {
      if (++counter[size_t(d)] < out[size_t(d)]) {
        cur += st[size_t(d)];
        break;
      }
      cur -= st[size_t(d)] * size_t(out[size_t(d)] - 1);
      counter[size_t(d)] = 0;
    }
  }
}
}  // namespace detail

inline Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  const int nd = a.ndim();
  require(int(perm.size()) == nd, "permute: permutation rank does not match " + shape_str(a.shape()));
  std::vector<bool> used(static_cast<size_t>(nd), false);
  for (int p : perm) {
    require(p >= 0 && p < nd && !used[size_t(p)], "permute: invalid permutation for " + shape_str(a.shape()));
    used[size_t(p)] = true;
  }
  Shape out(static_cast<size_t>(nd));
  std::vector<size_t> in_strides(static_cast<size_t>(nd));
  size_t s = 1;
  for (int i = nd - 1; i >= 0; --i) {
    in_strides[size_t(i)] = s;
    s *= size_t(a.dim(i));
  }
  std::vector<size_t> st(static_cast<size_t>(nd));  // input stride for each output axis
  for (int i = 0; i < nd; ++i) {
    out[size_t(i)] = a.dim(perm[size_t(i)]);
    st[size_t(i)] = in_strides[size_t(perm[size_t(i)])];
  }
  const size_t inner = size_t(out.back()), istride = st.back();
  std::vector<real> v(a.numel());
  const real* x = a.data().data();
  detail::permute_walk(out, st, [&](size_t o, size_t in) {
    for (size_t j = 0; j < inner; ++j) v[o + j] = x[in + j * istride];
  });
  return detail::make_result("permute", out, std::move(v), {a}, [out, st, inner, istride](TensorImpl& self) {
    real* gx = detail::grad_of(self, 0);
    if (!gx) return;
    const real* g = self.grad.data();
    detail::permute_walk(out, st, [&](size_t o, size_t in) {
      for (size_t j = 0; j < inner; ++j) gx[in + j * istride] += g[o + j];
    });
  });
}

inline Tensor transpose(const Tensor& a, int d0, int d1) {
  std::vector<int> perm(static_cast<size_t>(a.ndim()));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[size_t(detail::norm_axis(d0, a.ndim()))], perm[size_t(detail::norm_axis(d1, a.ndim()))]);
  return permute(a, perm);
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const int nd = parts[0].ndim();
  axis = detail::norm_axis(axis, nd);
  Shape out = parts[0].shape();
  out[size_t(axis)] = 0;
  for (const auto& p : parts) {
    bool ok = p.ndim() == nd;
    for (int d = 0; ok && d < nd; ++d) ok = d == axis || p.dim(d) == parts[0].dim(d);
    require(ok, "concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    out[size_t(axis)] += p.dim(axis);
  }
  size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= size_t(out[size_t(d)]);
  for (int d = axis + 1; d < nd; ++d) inner *= size_t(out[size_t(d)]);
  const size_t row = size_t(out[size_t(axis)]) * inner;
  std::vector<real> v(numel(out));
  std::vector<size_t> widths, offsets;
  size_t off = 0;
  for (const auto& p : parts) {
    const size_t w = size_t(p.dim(axis)) * inner;
    const real* x = p.data().data();
    for (size_t o = 0; o < outer; ++o) std::copy(x + o * w, x + (o + 1) * w, v.begin() + long(o * row + off));
    widths.push_back(w);
    offsets.push_back(off);
    off += w;
  }
  return detail::make_result("concat", out, std::move(v), parts,
                             [outer, row, widths, offsets](TensorImpl& self) {
                               for (size_t k = 0; k < widths.size(); ++k) {
                                 real* gx = detail::grad_of(self, k);
                                 if (!gx) continue;
                                 for (size_t o = 0; o < outer; ++o)
                                   for (size_t j = 0; j < widths[k]; ++j)
                                     gx[o * widths[k] + j] += self.grad[o * row + offsets[k] + j];
                               }
                             });
}

inline Tensor slice(const Tensor& a, int axis, int begin, int end) {
  axis = detail::norm_axis(axis, a.ndim());
  require(0 <= begin && begin < end && end <= a.dim(axis),
          "slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for axis " +
              std::to_string(axis) + " of " + shape_str(a.shape()));
  Shape out = a.shape();
  out[size_t(axis)] = end - begin;
  size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= size_t(a.dim(d));
  for (int d = axis + 1; d < a.ndim(); ++d) inner *= size_t(a.dim(d));
  const size_t in_row = size_t(a.dim(axis)) * inner, out_row = size_t(end - begin) * inner;
  const size_t off = size_t(begin) * inner;
  std::vector<real> v(numel(out));
  const real* x = a.data().data();
  for (size_t o = 0; o < outer; ++o)
    std::copy(x + o * in_row + off, x + o * in_row + off + out_row, v.begin() + long(o * out_row));
  return detail::make_result("slice", out, std::move(v), {a}, [=](TensorImpl& self) {
    real* gx = detail::grad_of(self, 0);
    if (!gx) return;
    for (size_t o = 0; o < outer; ++o)
      for (size_t j = 0; j < out_row; ++j) gx[o * in_row + off + j] += self.grad[o * out_row + j];
  });
}

inline Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  require(detail::broadcast_shape(a.shape(), shape, "broadcast_to") == shape,
          "broadcast_to: cannot expand " + shape_str(a.shape()) + " to " + shape_str(shape));
  auto idx = detail::broadcast_index(a.shape(), shape);
  std::vector<real> v(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) v[i] = a.data()[idx[i]];
  return detail::make_result("broadcast_to", shape, std::move(v), {a}, [idx = std::move(idx)](TensorImpl& self) {
    real* gx = detail::grad_of(self, 0);
    if (!gx) return;
    for (size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// a [..., M, K] × b [K, N], or batched a [B, M, K] × b [B, K, N].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.ndim() >= 2 && (b.ndim() == 2 || b.ndim() == 3),
          "matmul: unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  if (b.ndim() == 2) {
    const int k = a.dim(-1), n = b.dim(1);
    require(b.dim(0) == k, "matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = int(a.numel() / size_t(k));
    Shape out = a.shape();
    out.back() = n;
    std::vector<real> v(size_t(m) * n);
    detail::gemm(false, false, m, n, k, 1.f, a.data().data(), b.data().data(), 0.f, v.data());
    return detail::make_result("matmul", out, std::move(v), {a, b}, [m, n, k](TensorImpl& self) {
      const real* g = self.grad.data();
      if (real* ga = detail::grad_of(self, 0))
        detail::gemm(false, true, m, k, n, 1.f, g, self.inputs[1]->value.data(), 1.f, ga);
      if (real* gb = detail::grad_of(self, 1))
        detail::gemm(true, false, k, n, m, 1.f, self.inputs[0]->value.data(), g, 1.f, gb);
    });
  }
  require(a.ndim() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
          "matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<real> v(size_t(bs) * m * n);
  for (int i = 0; i < bs; ++i)
    detail::gemm(false, false, m, n, k, 1.f, a.data().data() + size_t(i) * m * k,
                 b.data().data() + size_t(i) * k * n, 0.f, v.data() + size_t(i) * m * n);
  return detail::make_result("bmm", {bs, m, n}, std::move(v), {a, b}, [bs, m, n, k](TensorImpl& self) {
    real* ga = detail::grad_of(self, 0);
    real* gb = detail::grad_of(self, 1);
    for (int i = 0; i < bs; ++i) {
      const real* g = self.grad.data() + size_t(i) * m * n;
      if (ga)
        detail::gemm(false, true, m, k, n, 1.f, g, self.inputs[1]->value.data() + size_t(i) * k * n, 1.f,
                     ga + size_t(i) * m * k);
      if (gb)
        detail::gemm(true, false, k, n, m, 1.f, self.inputs[0]->value.data() + size_t(i) * m * k, g, 1.f,
                     gb + size_t(i) * k * n);
    }
  });
}

/// x [..., in] · W [in, out] + b [out]; bias may be undefined.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int k = x.dim(-1), n = w.dim(-1);
  require(w.ndim() == 2 && w.dim(0) == k,
          "linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  if (!b.defined()) return matmul(x, w);
  require(b.ndim() == 1 && b.dim(0) == n, "linear: bias " + shape_str(b.shape()) + " does not match weight " +
                                              shape_str(w.shape()));
  const int m = int(x.numel() / size_t(k));
  Shape out = x.shape();
  out.back() = n;
  std::vector<real> v(size_t(m) * n);
  const real* bv = b.data().data();
  for (int r = 0; r < m; ++r) std::copy(bv, bv + n, v.begin() + long(r) * n);
  detail::gemm(false, false, m, n, k, 1.f, x.data().data(), w.data().data(), 1.f, v.data());
  return detail::make_result("linear", out, std::move(v), {x, w, b}, [m, n, k](TensorImpl& self) {
    const real* g = self.grad.data();
    if (real* gx = detail::grad_of(self, 0))
      detail::gemm(false, true, m, k, n, 1.f, g, self.inputs[1]->value.data(), 1.f, gx);
    if (real* gw = detail::grad_of(self, 1))
      detail::gemm(true, false, k, n, m, 1.f, self.inputs[0]->value.data(), g, 1.f, gw);
    if (real* gb = detail::grad_of(self, 2))
      for (int r = 0; r < m; ++r)
        for (int j = 0; j < n; ++j) gb[j] += g[size_t(r) * n + j];
  });
}

// ---------------------------------------------------------------------------
// Convolution

enum class PadMode { zeros, replicate };

struct Conv2dOptions {
  int stride = 1;
  int pad = 0;
  PadMode pad_mode = PadMode::zeros;
  int groups = 1;  // 1 (dense) or in_channels (depthwise)
};

namespace detail {

// Source coordinate for output position o and kernel tap t, or -1 if the tap
// lands in zero padding.
inline int conv_src(int o, int t, int stride, int pad, int size, PadMode mode) {
  const int i = o * stride + t - pad;
  if (i >= 0 && i < size) return i;
  return mode == PadMode::replicate ? std::clamp(i, 0, size - 1) : -1;
}

struct ConvGeom {
  int c, h, w, o, kh, kw, ho, wo;
  Conv2dOptions opt;
};

// Visits every (input row, output row) pair of an im2col column block, handing
// f the output-row index range [lo, hi) whose taps land inside the input row
// plus the input column of output column 0 (stride-aware).
template <typename F>
void im2col_rows(const ConvGeom& g, F f) {
  const size_t plane = size_t(g.ho) * g.wo;
  for (int c = 0; c < g.c; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        const size_t col_off = (size_t(c * g.kh + i) * g.kw + j) * plane;
        // Output columns whose tap ox*stride + j - pad falls inside [0, w).
        const int s = g.opt.stride, shift = j - g.opt.pad;
        const int lo = std::clamp((-shift + s - 1) / s * (shift < 0 ? 1 : 0), 0, g.wo);
        int hi = g.wo;
        while (hi > lo && (hi - 1) * s + shift >= g.w) --hi;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = conv_src(oy, i, s, g.opt.pad, g.h, g.opt.pad_mode);
          f(col_off + size_t(oy) * g.wo, c, iy, lo, hi, shift);
        }
      }
}

inline void im2col(const real* x, const ConvGeom& g, real* col) {
  const int s = g.opt.stride;
  const bool rep = g.opt.pad_mode == PadMode::replicate;
  im2col_rows(g, [&](size_t off, int c, int iy, int lo, int hi, int shift) {
    real* dst = col + off;
    if (iy < 0) {
      std::fill(dst, dst + g.wo, 0.f);
      return;
    }
    const real* row = x + (size_t(c) * g.h + iy) * g.w;
    for (int ox = lo; ox < hi; ++ox) dst[ox] = row[ox * s + shift];
    const real left = rep ? row[0] : 0.f, right = rep ? row[g.w - 1] : 0.f;
    for (int ox = 0; ox < lo; ++ox) dst[ox] = left;
    for (int ox = hi; ox < g.wo; ++ox) dst[ox] = right;
  });
}

inline void col2im(const real* col, const ConvGeom& g, real* gx) {
  const int s = g.opt.stride;
  const bool rep = g.opt.pad_mode == PadMode::replicate;
  im2col_rows(g, [&](size_t off, int c, int iy, int lo, int hi, int shift) {
    if (iy < 0) return;
    const real* src = col + off;
    real* row = gx + (size_t(c) * g.h + iy) * g.w;
    for (int ox = lo; ox < hi; ++ox) row[ox * s + shift] += src[ox];
    if (rep) {
      for (int ox = 0; ox < lo; ++ox) row[0] += src[ox];
      for (int ox = hi; ox < g.wo; ++ox) row[g.w - 1] += src[ox];
    }
  });
}

// Depthwise forward for one plane: out[oy,ox] += Σ k[i,j]·x[src(oy,i), src(ox,j)].
// Fixed-order dot product with 16 partial sums, so it vectorizes without
// reassociation flags and stays deterministic.
inline real dot(const real* __restrict a, const real* __restrict b, int n) {
  constexpr int kLanes = 16;
  real acc[kLanes] = {};
  int i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (int l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  real s = 0;
  for (; i < n; ++i) s += a[i] * b[i];
  for (int l = 0; l < kLanes; ++l) s += acc[l];
  return s;
}

inline void axpy(real* __restrict y, real a, const real* __restrict x, int n) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

inline void depthwise_plane(const real* x, const real* k, const ConvGeom& g, real* out) {
  for (int oy = 0; oy < g.ho; ++oy)
    for (int i = 0; i < g.kh; ++i) {
      const int iy = conv_src(oy, i, g.opt.stride, g.opt.pad, g.h, g.opt.pad_mode);
      if (iy < 0) continue;
      const real* row = x + size_t(iy) * g.w;
      real* orow = out + size_t(oy) * g.wo;
      for (int j = 0; j < g.kw; ++j) {
        const real kv = k[i * g.kw + j];
        if (g.opt.stride == 1) {
          // Interior span where ox + j - pad stays inside the row.
          const int lo = std::clamp(g.opt.pad - j, 0, g.wo), hi = std::clamp(g.w + g.opt.pad - j, lo, g.wo);
          axpy(orow + lo, kv, row + (j - g.opt.pad) + lo, hi - lo);
          if (g.opt.pad_mode == PadMode::replicate) {
            for (int ox = 0; ox < lo; ++ox) orow[ox] += kv * row[0];
            for (int ox = hi; ox < g.wo; ++ox) orow[ox] += kv * row[g.w - 1];
          }
        } else {
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = conv_src(ox, j, g.opt.stride, g.opt.pad, g.w, g.opt.pad_mode);
            if (ix >= 0) orow[ox] += kv * row[ix];
          }
        }
      }
    }
}

// Adjoint of depthwise_plane: accumulates into gx (if set) and gk (if set).
inline void depthwise_plane_backward(const real* x, const real* k, const real* gout, const ConvGeom& g,
                                     real* gx, real* gk) {
  for (int oy = 0; oy < g.ho; ++oy)
    for (int i = 0; i < g.kh; ++i) {
      const int iy = conv_src(oy, i, g.opt.stride, g.opt.pad, g.h, g.opt.pad_mode);
      if (iy < 0) continue;
      const real* row = x + size_t(iy) * g.w;
      real* grow = gx ? gx + size_t(iy) * g.w : nullptr;
      const real* go = gout + size_t(oy) * g.wo;
      for (int j = 0; j < g.kw; ++j) {
        const real kv = k[i * g.kw + j];
        real wacc = 0;
        if (g.opt.stride == 1) {
          const int lo = std::clamp(g.opt.pad - j, 0, g.wo), hi = std::clamp(g.w + g.opt.pad - j, lo, g.wo);
          const int shift = j - g.opt.pad;
          wacc += dot(go + lo, row + lo + shift, hi - lo);
          if (grow) axpy(grow + lo + shift, kv, go + lo, hi - lo);
          if (g.opt.pad_mode == PadMode::replicate) {
            real edge_lo = 0, edge_hi = 0;
            for (int ox = 0; ox < lo; ++ox) edge_lo += go[ox];
            for (int ox = hi; ox < g.wo; ++ox) edge_hi += go[ox];
            wacc += edge_lo * row[0] + edge_hi * row[g.w - 1];
            if (grow) {
              grow[0] += kv * edge_lo;
              grow[g.w - 1] += kv * edge_hi;
            }
          }
        } else {
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = conv_src(ox, j, g.opt.stride, g.opt.pad, g.w, g.opt.pad_mode);
            if (ix < 0) continue;
            wacc += go[ox] * row[ix];
            if (grow) grow[ix] += kv * go[ox];
          }
        }
        if (gk) gk[i * g.kw + j] += wacc;
      }
    }
}

}  // namespace detail

/// x [B, C, H, W], w [O, C/groups, kh, kw], optional bias [O].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt = {}) {
  require(x.ndim() == 4 && w.ndim() == 4,
          "conv2d: expected 4-d input and weight, got " + shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const int bs = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const bool depthwise = opt.groups != 1;
  if (depthwise)
    require(opt.groups == c && o == c && w.dim(1) == 1,
            "conv2d: depthwise needs weight [C,1,kh,kw] for input " + shape_str(x.shape()) + ", got " +
                shape_str(w.shape()));
  else
    require(w.dim(1) == c, "conv2d: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  if (bias.defined()) require(bias.ndim() == 1 && bias.dim(0) == o, "conv2d: bias must be [" + std::to_string(o) + "]");
  require(opt.stride >= 1 && opt.pad >= 0, "conv2d: invalid stride/padding");
  const int ho = (h + 2 * opt.pad - kh) / opt.stride + 1, wo = (wd + 2 * opt.pad - kw) / opt.stride + 1;
  require(ho > 0 && wo > 0, "conv2d: kernel larger than padded input " + shape_str(x.shape()));
  const detail::ConvGeom g{c, h, wd, o, kh, kw, ho, wo, opt};
  const size_t in_plane = size_t(h) * wd, out_plane = size_t(ho) * wo;
  const bool pointwise = !depthwise && kh == 1 && kw == 1 && opt.stride == 1 && opt.pad == 0;
  const int ck = c * kh * kw;

  std::vector<real> v(size_t(bs) * o * out_plane, 0.f);
  const real* xv = x.data().data();
  const real* wv = w.data().data();
  if (depthwise) {
    for (int b = 0; b < bs; ++b)
      for (int ch = 0; ch < c; ++ch)
        detail::depthwise_plane(xv + (size_t(b) * c + ch) * in_plane, wv + size_t(ch) * kh * kw, g,
                                v.data() + (size_t(b) * c + ch) * out_plane);
  } else {
    std::vector<real> col(pointwise ? 0 : size_t(ck) * out_plane);
    for (int b = 0; b < bs; ++b) {
      const real* src = xv + size_t(b) * c * in_plane;
      if (!pointwise) {
        detail::im2col(src, g, col.data());
        src = col.data();
      }
      detail::gemm(false, false, o, int(out_plane), ck, 1.f, wv, src, 0.f, v.data() + size_t(b) * o * out_plane);
    }
  }
  if (bias.defined())
    for (int b = 0; b < bs; ++b)
      for (int oc = 0; oc < o; ++oc) {
        real* dst = v.data() + (size_t(b) * o + oc) * out_plane;
        const real bv = bias.data()[size_t(oc)];
        for (size_t i = 0; i < out_plane; ++i) dst[i] += bv;
      }

  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result(
      depthwise ? "depthwise_conv2d" : "conv2d", {bs, o, ho, wo}, std::move(v), inputs,
      [=](TensorImpl& self) {
        const real* gout = self.grad.data();
        const real* xv = self.inputs[0]->value.data();
        const real* wv = self.inputs[1]->value.data();
        real* gx = detail::grad_of(self, 0);
        real* gw = detail::grad_of(self, 1);
        real* gb = self.inputs.size() > 2 ? detail::grad_of(self, 2) : nullptr;
        if (gb)
          for (int b = 0; b < bs; ++b)
            for (int oc = 0; oc < o; ++oc) {
              const real* src = gout + (size_t(b) * o + oc) * out_plane;
              double acc = 0;
              for (size_t i = 0; i < out_plane; ++i) acc += src[i];
              gb[oc] += real(acc);
            }
        if (depthwise) {
          for (int b = 0; b < bs; ++b)
            for (int ch = 0; ch < c; ++ch) {
              const real* xp = xv + (size_t(b) * c + ch) * in_plane;
              const real* gp = gout + (size_t(b) * c + ch) * out_plane;
              const real* kp = wv + size_t(ch) * kh * kw;
              real* gxp = gx ? gx + (size_t(b) * c + ch) * in_plane : nullptr;
              real* gwp = gw ? gw + size_t(ch) * kh * kw : nullptr;
              detail::depthwise_plane_backward(xp, kp, gp, g, gxp, gwp);
            }
          return;
        }
        std::vector<real> col(pointwise ? 0 : size_t(ck) * out_plane);
        std::vector<real> gcol(gx ? size_t(ck) * out_plane : 0);
        for (int b = 0; b < bs; ++b) {
          const real* gp = gout + size_t(b) * o * out_plane;
          if (gw) {
            const real* src = xv + size_t(b) * c * in_plane;
            if (!pointwise) {
              detail::im2col(src, g, col.data());
              src = col.data();
            }
            detail::gemm(false, true, o, ck, int(out_plane), 1.f, gp, src, 1.f, gw);
          }
          if (gx) {
            real* gxb = gx + size_t(b) * c * in_plane;
            if (pointwise) {
              detail::gemm(true, false, ck, int(out_plane), o, 1.f, wv, gp, 1.f, gxb);
            } else {
              detail::gemm(true, false, ck, int(out_plane), o, 1.f, wv, gp, 0.f, gcol.data());
              detail::col2im(gcol.data(), g, gxb);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Resampling

/// Bilinear resize of [B, C, H, W] with half-pixel centers and clamped edges.
inline Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  require(x.ndim() == 4, "upsample_bilinear: expected [B,C,H,W], got " + shape_str(x.shape()));
  require(out_h > 0 && out_w > 0, "upsample_bilinear: target size must be positive");
  const int bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  std::vector<real> v(size_t(bc) * out_h * out_w);
  const real* xv = x.data().data();
  for (int p = 0; p < bc; ++p) {
    const real* src = xv + size_t(p) * h * w;
    real* dst = v.data() + size_t(p) * out_h * out_w;
    for (int y = 0; y < out_h; ++y)
      for (int xo = 0; xo < out_w; ++xo) {
        const auto& [y0, y1, wy] = ty[size_t(y)];
        const auto& [x0, x1, wx] = tx[size_t(xo)];
        const real top = std::lerp(src[size_t(y0) * w + x0], src[size_t(y0) * w + x1], wx);
        const real bot = std::lerp(src[size_t(y1) * w + x0], src[size_t(y1) * w + x1], wx);
        dst[size_t(y) * out_w + xo] = std::lerp(top, bot, wy);
      }
  }
  return detail::make_result(
      "upsample_bilinear", {x.dim(0), x.dim(1), out_h, out_w}, std::move(v), {x},
      [=](TensorImpl& self) {
        real* gx = detail::grad_of(self, 0);
        if (!gx) return;
        for (int p = 0; p < bc; ++p) {
          real* dst = gx + size_t(p) * h * w;
          const real* g = self.grad.data() + size_t(p) * out_h * out_w;
          for (int y = 0; y < out_h; ++y)
            for (int xo = 0; xo < out_w; ++xo) {
              const auto& [y0, y1, wy] = ty[size_t(y)];
              const auto& [x0, x1, wx] = tx[size_t(xo)];
              const real gv = g[size_t(y) * out_w + xo];
              dst[size_t(y0) * w + x0] += gv * (1 - wy) * (1 - wx);
              dst[size_t(y0) * w + x1] += gv * (1 - wy) * wx;
              dst[size_t(y1) * w + x0] += gv * wy * (1 - wx);
              dst[size_t(y1) * w + x1] += gv * wy * wx;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization and attention

/// Normalizes over the last axis, then applies gamma [D] and beta [D].
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps = 1e-6f) {
  const int d = x.dim(-1);
  require(gamma.numel() == size_t(d) && beta.numel() == size_t(d),
          "layer_norm: affine parameters do not match last axis of " + shape_str(x.shape()));
  const size_t rows = x.numel() / size_t(d);
  std::vector<real> v(x.numel()), xhat(x.numel()), inv_std(rows);
  const real* xv = x.data().data();
  const real* gv = gamma.data().data();
  const real* bv = beta.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const real* row = xv + r * d;
    double mu = 0, var = 0;
    for (int i = 0; i < d; ++i) mu += row[i];
    mu /= d;
    for (int i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= d;
    const real is = real(1.0 / std::sqrt(var + eps));
    inv_std[r] = is;
    for (int i = 0; i < d; ++i) {
      const real xh = real(row[i] - mu) * is;
      xhat[r * d + size_t(i)] = xh;
      v[r * d + size_t(i)] = xh * gv[i] + bv[i];
    }
  }
  return detail::make_result(
      "layer_norm", x.shape(), std::move(v), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
        real* gx = detail::grad_of(self, 0);
        real* gg = detail::grad_of(self, 1);
        real* gb = detail::grad_of(self, 2);
        const real* gam = self.inputs[1]->value.data();
        const real* g = self.grad.data();
        for (size_t r = 0; r < rows; ++r) {
          const real* gr = g + r * d;
          const real* xr = xhat.data() + r * d;
          if (gg || gb)
            for (int i = 0; i < d; ++i) {
              if (gg) gg[i] += gr[i] * xr[i];
              if (gb) gb[i] += gr[i];
            }
          if (!gx) continue;
          double s1 = 0, s2 = 0;
          for (int i = 0; i < d; ++i) {
            const real dxh = gr[i] * gam[i];
            s1 += dxh;
            s2 += dxh * xr[i];
          }
          const real m1 = real(s1 / d), m2 = real(s2 / d);
          for (int i = 0; i < d; ++i)
            gx[r * d + size_t(i)] += inv_std[r] * (gr[i] * gam[i] - m1 - xr[i] * m2);
        }
      });
}

namespace detail {
inline void softmax_rows(real* x, size_t rows, size_t n) {
  for (size_t r = 0; r < rows; ++r) {
    real* row = x + r * n;
    const real mx = *std::max_element(row, row + n);
    double total = 0;
    for (size_t i = 0; i < n; ++i) {
      row[i] = std::exp(row[i] - mx);
      total += row[i];
    }
    const real inv = real(1.0 / total);
    for (size_t i = 0; i < n; ++i) row[i] *= inv;
  }
}
}  // namespace detail

/// Softmax over the last axis.
inline Tensor softmax(const Tensor& x) {
  const size_t n = size_t(x.dim(-1)), rows = x.numel() / n;
  std::vector<real> v = x.values();
  detail::softmax_rows(v.data(), rows, n);
  return detail::make_result("softmax", x.shape(), std::move(v), {x}, [n, rows](TensorImpl& self) {
    real* gx = detail::grad_of(self, 0);
    if (!gx) return;
    for (size_t r = 0; r < rows; ++r) {
      const real* y = self.value.data() + r * n;
      const real* g = self.grad.data() + r * n;
      double dotp = 0;
      for (size_t i = 0; i < n; ++i) dotp += g[i] * y[i];
      for (size_t i = 0; i < n; ++i) gx[r * n + i] += y[i] * (g[i] - real(dotp));
    }
  });
}

/// softmax(Q·Kᵀ/√dh)·V per (batch, head). q, k, v: [B, H, N, dh].
inline Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  require(q.ndim() == 4 && q.shape() == k.shape() && q.shape() == v.shape(),
          "attention: q/k/v shapes differ: " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
              shape_str(v.shape()));
  const int bh = q.dim(0) * q.dim(1), n = q.dim(2), dh = q.dim(3);
  const real sc = 1.f / std::sqrt(real(dh));
  std::vector<real> probs(size_t(bh) * n * n), out(q.numel());
  for (int i = 0; i < bh; ++i) {
    const size_t qo = size_t(i) * n * dh;
    real* p = probs.data() + size_t(i) * n * n;
    detail::gemm(false, true, n, n, dh, sc, q.data().data() + qo, k.data().data() + qo, 0.f, p);
    detail::softmax_rows(p, size_t(n), size_t(n));
    detail::gemm(false, false, n, dh, n, 1.f, p, v.data().data() + qo, 0.f, out.data() + qo);
  }
  return detail::make_result(
      "attention", q.shape(), std::move(out), {q, k, v},
      [bh, n, dh, sc, probs = std::move(probs)](TensorImpl& self) {
        real* gq = detail::grad_of(self, 0);
        real* gk = detail::grad_of(self, 1);
        real* gv = detail::grad_of(self, 2);
        std::vector<real> dp(size_t(n) * n);
        for (int i = 0; i < bh; ++i) {
          const size_t qo = size_t(i) * n * dh;
          const real* p = probs.data() + size_t(i) * n * n;
          const real* g = self.grad.data() + qo;
          const real* qv = self.inputs[0]->value.data() + qo;
          const real* kv = self.inputs[1]->value.data() + qo;
          const real* vv = self.inputs[2]->value.data() + qo;
          if (gv) detail::gemm(true, false, n, dh, n, 1.f, p, g, 1.f, gv + qo);
          if (!gq && !gk) continue;
          // dS = P ⊙ (dP − rowsum(dP ⊙ P)), dP = dO·Vᵀ
          detail::gemm(false, true, n, n, dh, 1.f, g, vv, 0.f, dp.data());
          for (int r = 0; r < n; ++r) {
            real* row = dp.data() + size_t(r) * n;
            const real* pr = p + size_t(r) * n;
            double s = 0;
            for (int c = 0; c < n; ++c) s += row[c] * pr[c];
            for (int c = 0; c < n; ++c) row[c] = pr[c] * (row[c] - real(s));
          }
          if (gq) detail::gemm(false, false, n, dh, n, sc, dp.data(), kv, 1.f, gq + qo);
          if (gk) detail::gemm(true, false, n, dh, n, sc, dp.data(), qv, 1.f, gk + qo);
        }
      });
}

/// Axial 2D rotary embedding on x [B, H, N, dh]. Tokens before `prefix` (the
/// registers) are left unrotated; token prefix+t sits at grid position
/// (rows[t], cols[t]). The first dh/4 channel pairs rotate with the row, the
/// remaining dh/4 with the column, at frequencies base^(-4j/dh).
inline Tensor rope2d(const Tensor& x, int prefix, const std::vector<double>& rows,
                     const std::vector<double>& cols, double base) {
  require(x.ndim() == 4, "rope2d: expected [B,H,N,dh], got " + shape_str(x.shape()));
  const int bh = x.dim(0) * x.dim(1), n = x.dim(2), dh = x.dim(3);
  require(dh % 4 == 0, "rope2d: head dim must be divisible by 4");
  require(rows.size() == cols.size() && int(rows.size()) + prefix == n,
          "rope2d: " + std::to_string(rows.size()) + " positions for " + std::to_string(n - prefix) +
              " spatial tokens");
  const int pairs = dh / 2, per_axis = dh / 4;
  std::vector<real> cs(size_t(n) * pairs, 1.f), sn(size_t(n) * pairs, 0.f);
  for (int t = prefix; t < n; ++t)
    for (int j = 0; j < pairs; ++j) {
      const int jj = j < per_axis ? j : j - per_axis;
      const double pos = j < per_axis ? rows[size_t(t - prefix)] : cols[size_t(t - prefix)];
      const double ang = pos * std::pow(base, -double(jj) / per_axis);
      cs[size_t(t) * pairs + j] = real(std::cos(ang));
      sn[size_t(t) * pairs + j] = real(std::sin(ang));
    }
  auto rotate = [=](const real* src, real* dst, real sign, bool accumulate) {
    for (int i = 0; i < bh; ++i)
      for (int t = 0; t < n; ++t) {
        const real* s = src + (size_t(i) * n + t) * dh;
        real* d = dst + (size_t(i) * n + t) * dh;
        const real* c = cs.data() + size_t(t) * pairs;
        const real* sv = sn.data() + size_t(t) * pairs;
        for (int j = 0; j < pairs; ++j) {
          const real a = s[2 * j], b = s[2 * j + 1], sj = sign * sv[j];
          const real ra = a * c[j] - b * sj, rb = a * sj + b * c[j];
          if (accumulate) {
            d[2 * j] += ra;
            d[2 * j + 1] += rb;
          } else {
            d[2 * j] = ra;
            d[2 * j + 1] = rb;
          }
        }
      }
  };
  std::vector<real> v(x.numel());
  rotate(x.data().data(), v.data(), 1.f, false);
  return detail::make_result("rope2d", x.shape(), std::move(v), {x}, [rotate](TensorImpl& self) {
    if (real* gx = detail::grad_of(self, 0)) rotate(self.grad.data(), gx, -1.f, true);
  });
}

}  // namespace pixl::ad
