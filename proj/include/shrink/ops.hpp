// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0
//
// Differentiable primitives. Every op checks its forward output for NaN/Inf
// and, when an input requires grad, records a backward closure on the
// current tape.
//
// Elementwise: add sub mul div (numpy broadcasting), neg scale add_scalar
//   exp log sqrt abs square sigmoid swish relu
// Reductions: sum mean (whole tensor or one axis)
// Layout: reshape permute transpose concat slice
// Other: masked_fill dropout matmul linear softmax log_softmax layer_norm
//   glu depthwise_conv1d

#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "shrink/rng.hpp"
#include "shrink/tensor.hpp"

namespace shrink {

namespace detail {

template <class T> void check_finite(const std::vector<T> &v, const char *op) {
  for (const T x : v) {
    if (!std::isfinite(x))
      throw NumericError(std::string("non-finite value in output of ") + op);
  }
}

template <class T> bool tracks(std::initializer_list<const Tensor<T> *> inputs) {
  if (!grad_enabled())
    return false;
  for (const auto *t : inputs)
    if (t->requires_grad())
      return true;
  return false;
}

template <class T, class Fn>
Tensor<T> finish(Tensor<T> out, const char *op, bool track, Fn &&bw) {
  check_finite(out.values(), op);
  if (track) {
    auto &impl = *out.impl();
    impl.requires_grad = true;
    impl.is_leaf = false;
    impl.op = op;
    impl.backward = std::forward<Fn>(bw);
    Tape<T>::current().record(out.impl());
  }
  return out;
}

// Splits a shape around `axis` into outer * n * inner.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape &shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i)
    s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  return s;
}

inline Shape broadcast_shapes(const Shape &a, const Shape &b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Offset of each output element into an operand broadcast to `out`.
inline std::vector<std::size_t> broadcast_offsets(const Shape &in, const Shape &out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    const std::size_t oi = i + (r - in.size());
    stride[oi] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    offsets[k] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += stride[d];
      if (idx[d] < out[d])
        break;
      off -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return offsets;
}

enum class BinOp { add, sub, mul, div };

template <class T> Tensor<T> binary(const Tensor<T> &a, const Tensor<T> &b, BinOp kind) {
  static constexpr const char *names[] = {"add", "sub", "mul", "div"};
  const char *name = names[static_cast<int>(kind)];
  const bool same = a.shape() == b.shape();
  Shape out_shape = same ? a.shape() : broadcast_shapes(a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  std::shared_ptr<std::vector<std::size_t>> ia, ib;
  if (!same) {
    if (a.shape() != out_shape)
      ia = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(a.shape(), out_shape));
    if (b.shape() != out_shape)
      ib = std::make_shared<std::vector<std::size_t>>(broadcast_offsets(b.shape(), out_shape));
  }
  Tensor<T> out(out_shape);
  const T *pa = a.values().data();
  const T *pb = b.values().data();
  T *po = out.values().data();
  auto ai = [&](std::size_t k) { return ia ? (*ia)[k] : k; };
  auto bi = [&](std::size_t k) { return ib ? (*ib)[k] : k; };
  switch (kind) {
  case BinOp::add:
    if (same)
      for (std::size_t k = 0; k < n; ++k)
        po[k] = pa[k] + pb[k];
    else
      for (std::size_t k = 0; k < n; ++k)
        po[k] = pa[ai(k)] + pb[bi(k)];
    break;
  case BinOp::sub:
    for (std::size_t k = 0; k < n; ++k)
      po[k] = pa[ai(k)] - pb[bi(k)];
    break;
  case BinOp::mul:
    if (same)
      for (std::size_t k = 0; k < n; ++k)
        po[k] = pa[k] * pb[k];
    else
      for (std::size_t k = 0; k < n; ++k)
        po[k] = pa[ai(k)] * pb[bi(k)];
    break;
  case BinOp::div:
    for (std::size_t k = 0; k < n; ++k)
      po[k] = pa[ai(k)] / pb[bi(k)];
    break;
  }
  auto A = a.impl();
  auto B = b.impl();
  return finish(std::move(out), name, tracks<T>({&a, &b}), [A, B, ia, ib, kind, n](TensorImpl<T> &self) {
    const T *g = self.grad.data();
    auto ai = [&](std::size_t k) { return ia ? (*ia)[k] : k; };
    auto bi = [&](std::size_t k) { return ib ? (*ib)[k] : k; };
    if (A->requires_grad) {
      T *ga = A->grad_buffer().data();
      const T *pb = B->data.data();
      for (std::size_t k = 0; k < n; ++k) {
        switch (kind) {
        case BinOp::add:
        case BinOp::sub:
          ga[ai(k)] += g[k];
          break;
        case BinOp::mul:
          ga[ai(k)] += g[k] * pb[bi(k)];
          break;
        case BinOp::div:
          ga[ai(k)] += g[k] / pb[bi(k)];
          break;
        }
      }
    }
    if (B->requires_grad) {
      T *gb = B->grad_buffer().data();
      const T *pa = A->data.data();
      const T *pb = B->data.data();
      for (std::size_t k = 0; k < n; ++k) {
        switch (kind) {
        case BinOp::add:
          gb[bi(k)] += g[k];
          break;
        case BinOp::sub:
          gb[bi(k)] -= g[k];
          break;
        case BinOp::mul:
          gb[bi(k)] += g[k] * pa[ai(k)];
          break;
        case BinOp::div: {
          const T d = pb[bi(k)];
          gb[bi(k)] -= g[k] * pa[ai(k)] / (d * d);
          break;
        }
        }
      }
    }
  });
}

// y = f(x); dy/dx expressed through (x, y).
template <class T, class F, class D>
Tensor<T> unary(const Tensor<T> &x, const char *name, F f, D df) {
  Tensor<T> out(x.shape());
  const auto &xv = x.values();
  auto &yv = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i)
    yv[i] = f(xv[i]);
  auto X = x.impl();
  return finish(std::move(out), name, tracks<T>({&x}), [X, df](TensorImpl<T> &self) {
    if (!X->requires_grad)
      return;
    auto &gx = X->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += self.grad[i] * df(X->data[i], self.data[i]);
  });
}

} // namespace detail

template <class T> Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
  return detail::binary(a, b, detail::BinOp::add);
}
template <class T> Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b) {
  return detail::binary(a, b, detail::BinOp::sub);
}
template <class T> Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b) {
  return detail::binary(a, b, detail::BinOp::mul);
}
template <class T> Tensor<T> div(const Tensor<T> &a, const Tensor<T> &b) {
  return detail::binary(a, b, detail::BinOp::div);
}

template <class T> Tensor<T> operator+(const Tensor<T> &a, const Tensor<T> &b) { return add(a, b); }
template <class T> Tensor<T> operator-(const Tensor<T> &a, const Tensor<T> &b) { return sub(a, b); }
template <class T> Tensor<T> operator*(const Tensor<T> &a, const Tensor<T> &b) { return mul(a, b); }
template <class T> Tensor<T> operator/(const Tensor<T> &a, const Tensor<T> &b) { return div(a, b); }

template <class T> Tensor<T> scale(const Tensor<T> &x, T s) {
  return detail::unary(
      x, "scale", [s](T v) { return v * s; }, [s](T, T) { return s; });
}
template <class T> Tensor<T> add_scalar(const Tensor<T> &x, T s) {
  return detail::unary(
      x, "add_scalar", [s](T v) { return v + s; }, [](T, T) { return T(1); });
}
template <class T> Tensor<T> neg(const Tensor<T> &x) { return scale(x, T(-1)); }

template <class T> Tensor<T> exp(const Tensor<T> &x) {
  return detail::unary(
      x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}
template <class T> Tensor<T> log(const Tensor<T> &x) {
  return detail::unary(
      x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}
template <class T> Tensor<T> sqrt(const Tensor<T> &x) {
  return detail::unary(
      x, "sqrt", [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}
template <class T> Tensor<T> abs(const Tensor<T> &x) {
  return detail::unary(
      x, "abs", [](T v) { return std::abs(v); },
      [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}
template <class T> Tensor<T> square(const Tensor<T> &x) {
  return detail::unary(
      x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}
template <class T> Tensor<T> sigmoid(const Tensor<T> &x) {
  return detail::unary(
      x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}
template <class T> Tensor<T> swish(const Tensor<T> &x) {
  return detail::unary(
      x, "swish", [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}
template <class T> Tensor<T> relu(const Tensor<T> &x) {
  return detail::unary(
      x, "relu", [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <class T> Tensor<T> sum(const Tensor<T> &x) {
  T acc = 0;
  for (const T v : x.values())
    acc += v;
  auto X = x.impl();
  return detail::finish(Tensor<T>::scalar(acc), "sum", detail::tracks<T>({&x}), [X](TensorImpl<T> &self) {
    if (!X->requires_grad)
      return;
    const T g = self.grad[0];
    for (auto &v : X->grad_buffer())
      v += g;
  });
}

template <class T> Tensor<T> mean(const Tensor<T> &x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Sum over one axis.
template <class T> Tensor<T> sum(const Tensor<T> &x, int axis, bool keepdim = false) {
  const std::size_t ax = x.normalize_axis(axis);
  const auto sp = detail::split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim)
    out_shape[ax] = 1;
  else
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  Tensor<T> out(out_shape);
  const T *px = x.values().data();
  T *po = out.values().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k) {
      const T *row = px + (o * sp.n + k) * sp.inner;
      T *dst = po + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i)
        dst[i] += row[i];
    }
  auto X = x.impl();
  return detail::finish(std::move(out), "sum_axis", detail::tracks<T>({&x}), [X, sp](TensorImpl<T> &self) {
    if (!X->requires_grad)
      return;
    T *gx = X->grad_buffer().data();
    const T *g = self.grad.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k) {
        T *row = gx + (o * sp.n + k) * sp.inner;
        const T *src = g + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i)
          row[i] += src[i];
      }
  });
}

template <class T> Tensor<T> mean(const Tensor<T> &x, int axis, bool keepdim = false) {
  const auto n = x.dim(axis);
  return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(n));
}

template <class T> Tensor<T> reshape(const Tensor<T> &x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor<T> out(std::move(shape), x.values());
  auto X = x.impl();
  return detail::finish(std::move(out), "reshape", detail::tracks<T>({&x}), [X](TensorImpl<T> &self) {
    if (!X->requires_grad)
      return;
    auto &gx = X->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i)
      gx[i] += self.grad[i];
  });
}

/// General axis permutation: out.shape[i] = x.shape[perm[i]].
template <class T> Tensor<T> permute(const Tensor<T> &x, const std::vector<std::size_t> &perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r)
    throw ShapeError("permutation rank mismatch for shape " + shape_str(x.shape()));
  Shape out_shape(r);
  std::vector<std::size_t> in_stride(r), src_stride(r);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_stride[i] = s;
    s *= x.shape()[i];
  }
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[perm[i]];
    src_stride[i] = in_stride[perm[i]];
  }
  const std::size_t n = x.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  {
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t k = 0; k < n; ++k) {
      (*src)[k] = off;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        off += src_stride[d];
        if (idx[d] < out_shape[d])
          break;
        off -= src_stride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }
  Tensor<T> out(out_shape);
  for (std::size_t k = 0; k < n; ++k)
    out[k] = x[(*src)[k]];
  auto X = x.impl();
  return detail::finish(std::move(out), "permute", detail::tracks<T>({&x}), [X, src](TensorImpl<T> &self) {
    if (!X->requires_grad)
      return;
    auto &gx = X->grad_buffer();
    for (std::size_t k = 0; k < src->size(); ++k)
      gx[(*src)[k]] += self.grad[k];
  });
}

template <class T> Tensor<T> transpose(const Tensor<T> &x, int a0 = -2, int a1 = -1) {
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[x.normalize_axis(a0)], perm[x.normalize_axis(a1)]);
  return permute(x, perm);
}

template <class T> Tensor<T> concat(const std::vector<Tensor<T>> &parts, int axis) {
  if (parts.empty())
    throw ShapeError("concat of zero tensors");
  const std::size_t ax = parts[0].normalize_axis(axis);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto &p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out_shape.size())
      throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < probe.size(); ++i)
      if (i != ax && probe[i] != out_shape[i])
        throw ShapeError("concat extent mismatch: " + shape_str(probe));
    out_shape[ax] += probe[ax];
  }
  const auto sp = detail::split_axis(out_shape, ax);
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto &p : parts) {
    const std::size_t len = p.shape()[ax] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(p.values().data() + o * len, len, out.values().data() + o * sp.n * sp.inner + offset);
    offsets.push_back(offset);
    offset += len;
  }
  std::vector<std::shared_ptr<TensorImpl<T>>> impls;
  bool track = false;
  for (const auto &p : parts) {
    impls.push_back(p.impl());
    track = track || (grad_enabled() && p.requires_grad());
  }
  return detail::finish(std::move(out), "concat", track, [impls, offsets, sp, ax](TensorImpl<T> &self) {
    for (std::size_t i = 0; i < impls.size(); ++i) {
      auto &P = *impls[i];
      if (!P.requires_grad)
        continue;
      const std::size_t len = P.shape[ax] * sp.inner;
      auto &gp = P.grad_buffer();
      for (std::size_t o = 0; o < sp.outer; ++o) {
        const T *src = self.grad.data() + o * sp.n * sp.inner + offsets[i];
        for (std::size_t j = 0; j < len; ++j)
          gp[o * len + j] += src[j];
      }
    }
  });
}

/// Contiguous range [start, start+len) along an axis.
template <class T> Tensor<T> slice(const Tensor<T> &x, int axis, std::size_t start, std::size_t len) {
  const std::size_t ax = x.normalize_axis(axis);
  if (start + len > x.shape()[ax])
    throw ShapeError("slice out of range on " + shape_str(x.shape()));
  const auto sp = detail::split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = len;
  Tensor<T> out(out_shape);
  const std::size_t chunk = len * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(x.values().data() + (o * sp.n + start) * sp.inner, chunk, out.values().data() + o * chunk);
  auto X = x.impl();
  return detail::finish(std::move(out), "slice", detail::tracks<T>({&x}), [X, sp, start, chunk](TensorImpl<T> &self) {
    if (!X->requires_grad)
      return;
    auto &gx = X->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < chunk; ++j)
        gx[(o * sp.n + start) * sp.inner + j] += self.grad[o * chunk + j];
  });
}

/// Positions where `mask` (broadcastable to x, 0/1 values) is nonzero are
/// replaced by `value` and receive no gradient.
template <class T> Tensor<T> masked_fill(const Tensor<T> &x, const Tensor<T> &mask, T value) {
  if (detail::broadcast_shapes(x.shape(), mask.shape()) != x.shape())
    throw ShapeError("mask " + shape_str(mask.shape()) + " does not broadcast to " + shape_str(x.shape()));
  auto offs = std::make_shared<std::vector<std::size_t>>(detail::broadcast_offsets(mask.shape(), x.shape()));
  Tensor<T> out(x.shape());
  for (std::size_t k = 0; k < x.numel(); ++k)
    out[k] = mask[(*offs)[k]] != T(0) ? value : x[k];
  auto X = x.impl();
  auto M = mask.impl();
  return detail::finish(std::move(out), "masked_fill", detail::tracks<T>({&x}), [X, M, offs](TensorImpl<T> &self) {
    if (!X->requires_grad)
      return;
    auto &gx = X->grad_buffer();
    for (std::size_t k = 0; k < gx.size(); ++k)
      if (M->data[(*offs)[k]] == T(0))
        gx[k] += self.grad[k];
  });
}

/// Inverted dropout; identity when not training or p == 0.
template <class T> Tensor<T> dropout(const Tensor<T> &x, double p, Rng &rng, bool training) {
  if (!training || p <= 0.0)
    return x;
  if (p >= 1.0)
    throw ConfigError("dropout probability must be < 1");
  const T keep_scale = T(1) / static_cast<T>(1.0 - p);
  auto keep = std::make_shared<std::vector<T>>(x.numel());
  Tensor<T> out(x.shape());
  for (std::size_t k = 0; k < x.numel(); ++k) {
    (*keep)[k] = rng.uniform() >= p ? keep_scale : T(0);
    out[k] = x[k] * (*keep)[k];
  }
  auto X = x.impl();
  return detail::finish(std::move(out), "dropout", detail::tracks<T>({&x}), [X, keep](TensorImpl<T> &self) {
    if (!X->requires_grad)
      return;
    auto &gx = X->grad_buffer();
    for (std::size_t k = 0; k < gx.size(); ++k)
      gx[k] += self.grad[k] * (*keep)[k];
  });
}

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <class T> void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T *A, const T *B, T *C) {
  for (std::size_t i = 0; i < m; ++i) {
    T *c = C + i * n;
    const T *a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p];
      const T *b = B + p * n;
      for (std::size_t j = 0; j < n; ++j)
        c[j] += av * b[j];
    }
  }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
template <class T> void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T *dC, const T *B, T *dA) {
  for (std::size_t i = 0; i < m; ++i) {
    const T *g = dC + i * n;
    T *da = dA + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T *b = B + p * n;
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j)
        acc += g[j] * b[j];
      da[p] += acc;
    }
  }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
template <class T> void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T *A, const T *dC, T *dB) {
  for (std::size_t i = 0; i < m; ++i) {
    const T *a = A + i * k;
    const T *g = dC + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p];
      T *db = dB + p * n;
      for (std::size_t j = 0; j < n; ++j)
        db[j] += av * g[j];
    }
  }
}

} // namespace detail

/// a[..., m, k] @ b[..., k, n] with broadcast batch dims.
template <class T> Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul needs rank >= 2, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k)
    throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  const Shape abatch(a.shape().begin(), a.shape().end() - 2);
  const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = detail::broadcast_shapes(abatch, bbatch);
  const std::size_t nb = numel(batch);
  std::vector<std::size_t> aoff(nb), boff(nb);
  {
    const auto ao = detail::broadcast_offsets(abatch, batch);
    const auto bo = detail::broadcast_offsets(bbatch, batch);
    for (std::size_t i = 0; i < nb; ++i) {
      aoff[i] = ao[i] * m * k;
      boff[i] = bo[i] * k * n;
    }
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);
  // A 2-D right operand shared by every batch entry of a contiguous left
  // operand is one large product.
  const bool flat = bbatch.empty() && abatch == batch;
  if (flat)
    detail::gemm_nn(nb * m, k, n, a.values().data(), b.values().data(), out.values().data());
  else
    for (std::size_t i = 0; i < nb; ++i)
      detail::gemm_nn(m, k, n, a.values().data() + aoff[i], b.values().data() + boff[i],
                      out.values().data() + i * m * n);
  auto A = a.impl();
  auto B = b.impl();
  auto offs = std::make_shared<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>>(std::move(aoff),
                                                                                              std::move(boff));
  return detail::finish(std::move(out), "matmul", detail::tracks<T>({&a, &b}),
                        [A, B, offs, m, k, n, nb, flat](TensorImpl<T> &self) {
                          const T *g = self.grad.data();
                          if (A->requires_grad) {
                            T *ga = A->grad_buffer().data();
                            if (flat)
                              detail::gemm_nt(nb * m, k, n, g, B->data.data(), ga);
                            else
                              for (std::size_t i = 0; i < nb; ++i)
                                detail::gemm_nt(m, k, n, g + i * m * n, B->data.data() + offs->second[i],
                                                ga + offs->first[i]);
                          }
                          if (B->requires_grad) {
                            T *gb = B->grad_buffer().data();
                            if (flat)
                              detail::gemm_tn(nb * m, k, n, A->data.data(), g, gb);
                            else
                              for (std::size_t i = 0; i < nb; ++i)
                                detail::gemm_tn(m, k, n, A->data.data() + offs->first[i], g + i * m * n,
                                                gb + offs->second[i]);
                          }
                        });
}

/// x[..., in] @ weight[in, out] + bias[out].
template <class T> Tensor<T> linear(const Tensor<T> &x, const Tensor<T> &weight, const Tensor<T> &bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(0))
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  const std::size_t in = weight.dim(0), outd = weight.dim(1);
  if (bias.rank() != 1 || bias.dim(0) != outd)
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " vs weight " + shape_str(weight.shape()));
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outd;
  Tensor<T> out(out_shape);
  T *po = out.values().data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(bias.values().data(), outd, po + r * outd);
  detail::gemm_nn(rows, in, outd, x.values().data(), weight.values().data(), po);
  auto X = x.impl();
  auto W = weight.impl();
  auto Bi = bias.impl();
  return detail::finish(std::move(out), "linear", detail::tracks<T>({&x, &weight, &bias}),
                        [X, W, Bi, rows, in, outd](TensorImpl<T> &self) {
                          const T *g = self.grad.data();
                          if (X->requires_grad)
                            detail::gemm_nt(rows, in, outd, g, W->data.data(), X->grad_buffer().data());
                          if (W->requires_grad)
                            detail::gemm_tn(rows, in, outd, X->data.data(), g, W->grad_buffer().data());
                          if (Bi->requires_grad) {
                            T *gb = Bi->grad_buffer().data();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < outd; ++j)
                                gb[j] += g[r * outd + j];
                          }
                        });
}

template <class T> Tensor<T> softmax(const Tensor<T> &x, int axis = -1) {
  const auto sp = detail::split_axis(x.shape(), x.normalize_axis(axis));
  Tensor<T> out(x.shape());
  const T *px = x.values().data();
  T *py = out.values().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k)
        mx = std::max(mx, px[base + k * sp.inner]);
      T z = 0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const T e = std::exp(px[base + k * sp.inner] - mx);
        py[base + k * sp.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < sp.n; ++k)
        py[base + k * sp.inner] /= z;
    }
  auto X = x.impl();
  return detail::finish(std::move(out), "softmax", detail::tracks<T>({&x}), [X, sp](TensorImpl<T> &self) {
    if (!X->requires_grad)
      return;
    T *gx = X->grad_buffer().data();
    const T *g = self.grad.data();
    const T *y = self.data.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.n * sp.inner + i;
        T dot = 0;
        for (std::size_t k = 0; k < sp.n; ++k)
          dot += g[base + k * sp.inner] * y[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.n; ++k) {
          const std::size_t j = base + k * sp.inner;
          gx[j] += y[j] * (g[j] - dot);
        }
      }
  });
}

template <class T> Tensor<T> log_softmax(const Tensor<T> &x, int axis = -1) {
  const auto sp = detail::split_axis(x.shape(), x.normalize_axis(axis));
  Tensor<T> out(x.shape());
  const T *px = x.values().data();
  T *py = out.values().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < sp.n; ++k)
        mx = std::max(mx, px[base + k * sp.inner]);
      T z = 0;
      for (std::size_t k = 0; k < sp.n; ++k)
        z += std::exp(px[base + k * sp.inner] - mx);
      const T lz = mx + std::log(z);
      for (std::size_t k = 0; k < sp.n; ++k)
        py[base + k * sp.inner] = px[base + k * sp.inner] - lz;
    }
  auto X = x.impl();
  return detail::finish(std::move(out), "log_softmax", detail::tracks<T>({&x}), [X, sp](TensorImpl<T> &self) {
    if (!X->requires_grad)
      return;
    T *gx = X->grad_buffer().data();
    const T *g = self.grad.data();
    const T *y = self.data.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.n * sp.inner + i;
        T gs = 0;
        for (std::size_t k = 0; k < sp.n; ++k)
          gs += g[base + k * sp.inner];
        for (std::size_t k = 0; k < sp.n; ++k) {
          const std::size_t j = base + k * sp.inner;
          gx[j] += g[j] - std::exp(y[j]) * gs;
        }
      }
  });
}

/// Normalizes over the last axis, then applies gamma * xhat + beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta, T eps = T(1e-5)) {
  const std::size_t n = x.dim(-1);
  if (gamma.numel() != n || beta.numel() != n)
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(n) + " entries");
  if (!(eps > T(0)))
    throw ConfigError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / n;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  Tensor<T> out(x.shape());
  const T *px = x.values().data();
  const T *pg = gamma.values().data();
  const T *pb = beta.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T *row = px + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j)
      mu += row[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j)
      var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mu) * rs;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = pg[j] * h + pb[j];
    }
  }
  auto X = x.impl();
  auto G = gamma.impl();
  auto Bt = beta.impl();
  return detail::finish(std::move(out), "layer_norm", detail::tracks<T>({&x, &gamma, &beta}),
                        [X, G, Bt, xhat, rstd, rows, n](TensorImpl<T> &self) {
                          const T *g = self.grad.data();
                          if (G->requires_grad) {
                            auto &gg = G->grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < n; ++j)
                                gg[j] += g[r * n + j] * (*xhat)[r * n + j];
                          }
                          if (Bt->requires_grad) {
                            auto &gb = Bt->grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < n; ++j)
                                gb[j] += g[r * n + j];
                          }
                          if (X->requires_grad) {
                            auto &gx = X->grad_buffer();
                            const T inv_n = T(1) / static_cast<T>(n);
                            for (std::size_t r = 0; r < rows; ++r) {
                              T s1 = 0, s2 = 0;
                              for (std::size_t j = 0; j < n; ++j) {
                                const T gh = g[r * n + j] * G->data[j];
                                s1 += gh;
                                s2 += gh * (*xhat)[r * n + j];
                              }
                              for (std::size_t j = 0; j < n; ++j) {
                                const T gh = g[r * n + j] * G->data[j];
                                gx[r * n + j] += (*rstd)[r] * (gh - inv_n * s1 - (*xhat)[r * n + j] * inv_n * s2);
                              }
                            }
                          }
                        });
}

/// Gated linear unit over the last axis: first half * sigmoid(second half).
template <class T> Tensor<T> glu(const Tensor<T> &x) {
  const std::size_t two_h = x.dim(-1);
  if (two_h % 2 != 0)
    throw ShapeError("glu needs an even last dimension, got " + shape_str(x.shape()));
  const std::size_t h = two_h / 2, rows = x.numel() / two_h;
  Shape out_shape = x.shape();
  out_shape.back() = h;
  Tensor<T> out(out_shape);
  auto gate = std::make_shared<std::vector<T>>(rows * h);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < h; ++j) {
      const T s = T(1) / (T(1) + std::exp(-x[r * two_h + h + j]));
      (*gate)[r * h + j] = s;
      out[r * h + j] = x[r * two_h + j] * s;
    }
  auto X = x.impl();
  return detail::finish(std::move(out), "glu", detail::tracks<T>({&x}), [X, gate, rows, h](TensorImpl<T> &self) {
    if (!X->requires_grad)
      return;
    auto &gx = X->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < h; ++j) {
        const T g = self.grad[r * h + j];
        const T s = (*gate)[r * h + j];
        const T a = X->data[r * 2 * h + j];
        gx[r * 2 * h + j] += g * s;
        gx[r * 2 * h + h + j] += g * a * s * (T(1) - s);
      }
  });
}

/// Per-channel 1-d convolution over time with zero "same" padding.
/// x is [batch, time, channels], kernel is [channels, width] with odd width.
/// With stride s the output has ceil(time / s) frames and frame o is centered
/// on input frame o * s.
template <class T> Tensor<T> depthwise_conv1d(const Tensor<T> &x, const Tensor<T> &kernel, std::size_t stride = 1) {
  if (x.rank() != 3 || kernel.rank() != 2 || kernel.dim(0) != x.dim(2))
    throw ShapeError("depthwise_conv1d: input " + shape_str(x.shape()) + " vs kernel " + shape_str(kernel.shape()));
  const std::size_t w = kernel.dim(1);
  if (w % 2 == 0)
    throw ConfigError("depthwise_conv1d: kernel width must be odd, got " + std::to_string(w));
  if (stride == 0)
    throw ConfigError("depthwise_conv1d: stride must be positive");
  const std::size_t B = x.dim(0), Tin = x.dim(1), C = x.dim(2);
  const std::size_t Tout = (Tin + stride - 1) / stride;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(w / 2);
  // kt[j][c] so the channel loop is contiguous.
  auto kt = std::make_shared<std::vector<T>>(w * C);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < w; ++j)
      (*kt)[j * C + c] = kernel[c * w + j];
  Tensor<T> out(Shape{B, Tout, C});
  const T *px = x.values().data();
  T *po = out.values().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Tout; ++o) {
      T *dst = po + (b * Tout + o) * C;
      for (std::size_t j = 0; j < w; ++j) {
        const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(o * stride + j) - pad;
        if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(Tin))
          continue;
        const T *src = px + (b * Tin + static_cast<std::size_t>(ti)) * C;
        const T *kk = kt->data() + j * C;
        for (std::size_t c = 0; c < C; ++c)
          dst[c] += src[c] * kk[c];
      }
    }
  auto X = x.impl();
  auto K = kernel.impl();
  return detail::finish(std::move(out), "depthwise_conv1d", detail::tracks<T>({&x, &kernel}),
                        [X, K, kt, B, Tin, Tout, C, w, pad, stride](TensorImpl<T> &self) {
                          const T *g = self.grad.data();
                          T *gx = X->requires_grad ? X->grad_buffer().data() : nullptr;
                          std::vector<T> gkt(K->requires_grad ? w * C : 0, T(0));
                          for (std::size_t b = 0; b < B; ++b)
                            for (std::size_t o = 0; o < Tout; ++o) {
                              const T *go = g + (b * Tout + o) * C;
                              for (std::size_t j = 0; j < w; ++j) {
                                const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(o * stride + j) - pad;
                                if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(Tin))
                                  continue;
                                const std::size_t row = (b * Tin + static_cast<std::size_t>(ti)) * C;
                                if (gx) {
                                  const T *kk = kt->data() + j * C;
                                  for (std::size_t c = 0; c < C; ++c)
                                    gx[row + c] += go[c] * kk[c];
                                }
                                if (!gkt.empty()) {
                                  const T *src = X->data.data() + row;
                                  T *gk = gkt.data() + j * C;
                                  for (std::size_t c = 0; c < C; ++c)
                                    gk[c] += go[c] * src[c];
                                }
                              }
                            }
                          if (!gkt.empty()) {
                            auto &gk = K->grad_buffer();
                            for (std::size_t c = 0; c < C; ++c)
                              for (std::size_t j = 0; j < w; ++j)
                                gk[c * w + j] += gkt[j * C + c];
                          }
                        });
}

} // namespace shrink
