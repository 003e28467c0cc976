#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "seanet/graph.hpp"
#include "seanet/tensor.hpp"

// Differentiable tensor operations. Each op validates shapes, computes its
// value (Eigen kernels on the contiguous buffers), checks the result is
// finite, and appends a node with the matching backward rule to the graph.

namespace seanet {

namespace detail {

/// Iterates the elements of `a`, yielding (index in a, index in b) where `b`
/// is broadcast over `a` numpy-style: right-aligned, each dim equal or 1.
/// Throws when the shapes are not compatible.
template <typename Fn>
void for_each_broadcast(const Shape& a, const Shape& b, Fn&& fn) {
  const std::int64_t r = a.rank();
  const std::int64_t rb = b.rank();
  if (rb > r) {
    throw ShapeError("cannot broadcast " + b.str() + " over " + a.str());
  }
  std::vector<std::int64_t> bstride(static_cast<std::size_t>(r), 0);
  std::int64_t s = 1;
  for (std::int64_t i = rb - 1; i >= 0; --i) {
    const std::int64_t ai = a[r - rb + i];
    if (b[i] != 1 && b[i] != ai) {
      throw ShapeError("cannot broadcast " + b.str() + " over " + a.str());
    }
    bstride[static_cast<std::size_t>(r - rb + i)] = (b[i] == 1) ? 0 : s;
    s *= b[i];
  }
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t ib = 0;
  const std::int64_t total = a.numel();
  for (std::int64_t ia = 0; ia < total; ++ia) {
    fn(ia, ib);
    for (std::int64_t d = r - 1; d >= 0; --d) {
      ++idx[static_cast<std::size_t>(d)];
      ib += bstride[static_cast<std::size_t>(d)];
      if (idx[static_cast<std::size_t>(d)] < a[d]) break;
      ib -= bstride[static_cast<std::size_t>(d)] * a[d];
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
}

inline bool same_dims(const Shape& a, const Shape& b) { return a == b; }

template <typename S>
void check_rank(const Tensor<S>& t, std::int64_t r, const char* op) {
  if (t.empty() || t.rank() != r) {
    throw ShapeError(std::string(op) + " expects a rank-" + std::to_string(r) +
                     " tensor, got " + (t.empty() ? "empty" : t.shape().str()));
  }
}

/// Patches of a padded NHWC map laid out as rows (kh, kw, cin), one row per
/// output pixel. 3x3 kernel, zero padding 1.
template <typename S>
AlignedVec<S> im2col3x3(const S* x, std::int64_t n, std::int64_t h, std::int64_t w,
                         std::int64_t c, std::int64_t stride, std::int64_t ho, std::int64_t wo) {
  AlignedVec<S> cols(static_cast<std::size_t>(n * ho * wo * 9 * c), S(0));
  S* out = cols.data();
  for (std::int64_t in = 0; in < n; ++in) {
    const S* img = x + in * h * w * c;
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        S* row = out + ((in * ho + oy) * wo + ox) * 9 * c;
        for (std::int64_t ky = 0; ky < 3; ++ky) {
          const std::int64_t iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t kx = 0; kx < 3; ++kx) {
            const std::int64_t ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            std::memcpy(row + (ky * 3 + kx) * c, img + (iy * w + ix) * c,
                        static_cast<std::size_t>(c) * sizeof(S));
          }
        }
      }
    }
  }
  return cols;
}

/// Scatter-add inverse of im2col3x3.
template <typename S>
void col2im3x3_add(S* dx, const S* dcols, std::int64_t n, std::int64_t h, std::int64_t w,
                   std::int64_t c, std::int64_t stride, std::int64_t ho, std::int64_t wo) {
  for (std::int64_t in = 0; in < n; ++in) {
    S* img = dx + in * h * w * c;
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        const S* row = dcols + ((in * ho + oy) * wo + ox) * 9 * c;
        for (std::int64_t ky = 0; ky < 3; ++ky) {
          const std::int64_t iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t kx = 0; kx < 3; ++kx) {
            const std::int64_t ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            S* dst = img + (iy * w + ix) * c;
            const S* src = row + (ky * 3 + kx) * c;
            for (std::int64_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Guard added to every elementwise-division denominator.
template <typename S>
inline constexpr S kDivEpsilon = S(1e-8);

template <typename S>
Tensor<S> matmul(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_rank(a, 2, "matmul");
  detail::check_rank(b, 2, "matmul");
  const std::int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul inner dims disagree: " + a.shape().str() + " * " + b.shape().str());
  }
  Tensor<S> out(Shape{n, m});
  as_matrix(out, n, m).noalias() = as_matrix(a, n, k) * as_matrix(b, k, m);
  require_finite(out, "matmul");
  if (!g.recording()) return out;
  const auto ia = g.track(a), ib = g.track(b);
  typename Graph<S>::BackwardFn fn;
  if (g.any_needs({ia, ib})) {
    fn = [a, b, ia, ib, n, k, m](Graph<S>& gg, const AlignedVec<S>& go) {
      ConstMatMap<S> gmat(go.data(), n, m);
      if (gg.needs_grad(ia)) {
        auto& da = gg.grad_of(ia);
        MatMap<S>(da.data(), n, k).noalias() += gmat * as_matrix(b, k, m).transpose();
      }
      if (gg.needs_grad(ib)) {
        auto& db = gg.grad_of(ib);
        MatMap<S>(db.data(), k, m).noalias() += as_matrix(a, n, k).transpose() * gmat;
      }
    };
  }
  return g.emit(std::move(out), {ia, ib}, std::move(fn));
}

/// Per-pixel linear map over channels: NHWC x (Cin x Cout) + bias.
/// Equivalent to reshaping to (N*H*W) x Cin and applying matmul.
template <typename S>
Tensor<S> conv1x1(Graph<S>& g, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  detail::check_rank(x, 4, "conv1x1");
  detail::check_rank(w, 2, "conv1x1 weight");
  detail::check_rank(b, 1, "conv1x1 bias");
  const std::int64_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3);
  const std::int64_t co = w.dim(1);
  if (w.dim(0) != ci) {
    throw ShapeError("conv1x1 channel mismatch: input " + x.shape().str() + " vs weight " +
                     w.shape().str());
  }
  if (b.dim(0) != co) {
    throw ShapeError("conv1x1 bias mismatch: weight " + w.shape().str() + " vs bias " +
                     b.shape().str());
  }
  const std::int64_t p = n * h * wd;
  Tensor<S> out(Shape{n, h, wd, co});
  {
    auto y = as_matrix(out, p, co);
    y.noalias() = as_matrix(x, p, ci) * as_matrix(w, ci, co);
    y.rowwise() += ConstMatMap<S>(b.data(), 1, co).row(0);
  }
  require_finite(out, "conv1x1");
  if (!g.recording()) return out;
  const auto ix = g.track(x), iw = g.track(w), ib = g.track(b);
  typename Graph<S>::BackwardFn fn;
  if (g.any_needs({ix, iw, ib})) {
    fn = [x, w, ix, iw, ib, p, ci, co](Graph<S>& gg, const AlignedVec<S>& go) {
      ConstMatMap<S> gmat(go.data(), p, co);
      if (gg.needs_grad(ix)) {
        auto& dx = gg.grad_of(ix);
        MatMap<S>(dx.data(), p, ci).noalias() += gmat * as_matrix(w, w.dim(0), co).transpose();
      }
      if (gg.needs_grad(iw)) {
        auto& dw = gg.grad_of(iw);
        MatMap<S>(dw.data(), ci, co).noalias() += as_matrix(x, p, ci).transpose() * gmat;
      }
      if (gg.needs_grad(ib)) {
        auto& db = gg.grad_of(ib);
        MatMap<S>(db.data(), 1, co) += gmat.colwise().sum();
      }
    };
  }
  return g.emit(std::move(out), {ix, iw, ib}, std::move(fn));
}

/// 3x3 convolution with zero padding 1 and stride 1 or 2, the only spatial
/// kernel the backbone uses. Weight layout [3,3,Cin,Cout].
template <typename S>
Tensor<S> conv3x3(Graph<S>& g, const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                  std::int64_t stride) {
  detail::check_rank(x, 4, "conv3x3");
  detail::check_rank(w, 4, "conv3x3 weight");
  detail::check_rank(b, 1, "conv3x3 bias");
  if (stride != 1 && stride != 2) {
    throw ShapeError("conv3x3 stride must be 1 or 2, got " + std::to_string(stride));
  }
  const std::int64_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3);
  if (w.dim(0) != 3 || w.dim(1) != 3 || w.dim(2) != ci) {
    throw ShapeError("conv3x3 weight mismatch: input " + x.shape().str() + " vs weight " +
                     w.shape().str());
  }
  const std::int64_t co = w.dim(3);
  if (b.dim(0) != co) {
    throw ShapeError("conv3x3 bias mismatch: weight " + w.shape().str() + " vs bias " +
                     b.shape().str());
  }
  const std::int64_t ho = (h - 1) / stride + 1;
  const std::int64_t wo = (wd - 1) / stride + 1;
  const std::int64_t p = n * ho * wo;
  const std::int64_t kc = 9 * ci;
  AlignedVec<S> cols = detail::im2col3x3(x.data(), n, h, wd, ci, stride, ho, wo);
  Tensor<S> out(Shape{n, ho, wo, co});
  {
    auto y = as_matrix(out, p, co);
    y.noalias() = ConstMatMap<S>(cols.data(), p, kc) * as_matrix(w, kc, co);
    y.rowwise() += ConstMatMap<S>(b.data(), 1, co).row(0);
  }
  require_finite(out, "conv3x3");
  if (!g.recording()) return out;
  const auto ix = g.track(x), iw = g.track(w), ib = g.track(b);
  typename Graph<S>::BackwardFn fn;
  if (g.any_needs({ix, iw, ib})) {
    fn = [w, ix, iw, ib, cols = std::move(cols), n, h, wd, ci, co, stride, ho, wo, p,
          kc](Graph<S>& gg, const AlignedVec<S>& go) {
      ConstMatMap<S> gmat(go.data(), p, co);
      if (gg.needs_grad(iw)) {
        auto& dw = gg.grad_of(iw);
        MatMap<S>(dw.data(), kc, co).noalias() +=
            ConstMatMap<S>(cols.data(), p, kc).transpose() * gmat;
      }
      if (gg.needs_grad(ib)) {
        auto& db = gg.grad_of(ib);
        MatMap<S>(db.data(), 1, co) += gmat.colwise().sum();
      }
      if (gg.needs_grad(ix)) {
        AlignedVec<S> dcols(static_cast<std::size_t>(p * kc));
        MatMap<S>(dcols.data(), p, kc).noalias() = gmat * as_matrix(w, kc, co).transpose();
        auto& dx = gg.grad_of(ix);
        detail::col2im3x3_add(dx.data(), dcols.data(), n, h, wd, ci, stride, ho, wo);
      }
    };
  }
  return g.emit(std::move(out), {ix, iw, ib}, std::move(fn));
}

/// Spatial squeeze: mean over H and W per channel, NHWC -> Nx1x1xC. The
/// backward pass spreads each incoming gradient uniformly as g/(H*W).
template <typename S>
Tensor<S> global_avg_pool(Graph<S>& g, const Tensor<S>& x) {
  detail::check_rank(x, 4, "global_avg_pool");
  const std::int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::int64_t hw = h * w;
  Tensor<S> out(Shape{n, 1, 1, c});
  for (std::int64_t in = 0; in < n; ++in) {
    ConstMatMap<S> img(x.data() + in * hw * c, hw, c);
    MatMap<S>(out.data() + in * c, 1, c) = img.colwise().sum() / S(hw);
  }
  require_finite(out, "global_avg_pool");
  if (!g.recording()) return out;
  const auto ix = g.track(x);
  typename Graph<S>::BackwardFn fn;
  if (g.needs_grad(ix)) {
    fn = [ix, n, hw, c](Graph<S>& gg, const AlignedVec<S>& go) {
      auto& dx = gg.grad_of(ix);
      for (std::int64_t in = 0; in < n; ++in) {
        MatMap<S> dimg(dx.data() + in * hw * c, hw, c);
        dimg.rowwise() += ConstMatMap<S>(go.data() + in * c, 1, c).row(0) / S(hw);
      }
    };
  }
  return g.emit(std::move(out), {ix}, std::move(fn));
}

template <typename S>
Tensor<S> relu(Graph<S>& g, const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  as_array(out) = as_array(x).max(S(0));
  require_finite(out, "relu");
  if (!g.recording()) return out;
  const auto ix = g.track(x);
  typename Graph<S>::BackwardFn fn;
  if (g.needs_grad(ix)) {
    fn = [ix, y = out](Graph<S>& gg, const AlignedVec<S>& go) {
      auto& dx = gg.grad_of(ix);
      const S* yv = y.data();
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (yv[i] > S(0)) dx[i] += go[i];
      }
    };
  }
  return g.emit(std::move(out), {ix}, std::move(fn));
}

template <typename S>
Tensor<S> sigmoid(Graph<S>& g, const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  {
    const S* in = x.data();
    S* ov = out.data();
    const std::int64_t total = x.numel();
    for (std::int64_t i = 0; i < total; ++i) {
      // Branch keeps exp() argument non-positive so neither tail overflows.
      const S v = in[i];
      if (v >= S(0)) {
        ov[i] = S(1) / (S(1) + std::exp(-v));
      } else {
        const S e = std::exp(v);
        ov[i] = e / (S(1) + e);
      }
    }
  }
  require_finite(out, "sigmoid");
  if (!g.recording()) return out;
  const auto ix = g.track(x);
  typename Graph<S>::BackwardFn fn;
  if (g.needs_grad(ix)) {
    fn = [ix, y = out](Graph<S>& gg, const AlignedVec<S>& go) {
      auto& dx = gg.grad_of(ix);
      const S* yv = y.data();
      for (std::size_t i = 0; i < go.size(); ++i) {
        dx[i] += go[i] * yv[i] * (S(1) - yv[i]);
      }
    };
  }
  return g.emit(std::move(out), {ix}, std::move(fn));
}

/// Softmax along `axis` with max-subtraction for overflow safety. Output is
/// nonnegative and sums to 1 along the axis.
template <typename S>
Tensor<S> softmax(Graph<S>& g, const Tensor<S>& x, std::int64_t axis) {
  if (x.empty()) throw ShapeError("softmax on empty tensor");
  if (axis < 0 || axis >= x.rank()) {
    throw ShapeError("softmax axis " + std::to_string(axis) + " invalid for shape " +
                     x.shape().str());
  }
  const std::int64_t an = x.dim(axis);
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Tensor<S> out(x.shape());
  const S* in = x.data();
  S* ov = out.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * an * inner + i;
      S mx = in[base];
      for (std::int64_t j = 1; j < an; ++j) mx = std::max(mx, in[base + j * inner]);
      S total = S(0);
      for (std::int64_t j = 0; j < an; ++j) {
        const S e = std::exp(in[base + j * inner] - mx);
        ov[base + j * inner] = e;
        total += e;
      }
      for (std::int64_t j = 0; j < an; ++j) ov[base + j * inner] /= total;
    }
  }
  require_finite(out, "softmax");
  if (!g.recording()) return out;
  const auto ix = g.track(x);
  typename Graph<S>::BackwardFn fn;
  if (g.needs_grad(ix)) {
    fn = [ix, y = out, outer, an, inner](Graph<S>& gg, const AlignedVec<S>& go) {
      auto& dx = gg.grad_of(ix);
      const S* yv = y.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * an * inner + i;
          S dot = S(0);
          for (std::int64_t j = 0; j < an; ++j) {
            dot += go[static_cast<std::size_t>(base + j * inner)] * yv[base + j * inner];
          }
          for (std::int64_t j = 0; j < an; ++j) {
            const std::int64_t k = base + j * inner;
            dx[static_cast<std::size_t>(k)] += yv[k] * (go[static_cast<std::size_t>(k)] - dot);
          }
        }
      }
    };
  }
  return g.emit(std::move(out), {ix}, std::move(fn));
}

namespace detail {

enum class EwKind { Add, Mul, Div };

// Shared elementwise driver: b broadcasts over a (the output keeps a's
// shape). Gradients for b are reduced back over the broadcast axes.
template <typename S>
Tensor<S> elementwise(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b, EwKind kind,
                      const char* name) {
  if (a.empty() || b.empty()) throw ShapeError(std::string(name) + " on empty tensor");
  const S eps = kDivEpsilon<S>;
  Tensor<S> out(a.shape());
  const bool same = same_dims(a.shape(), b.shape());
  if (same) {
    switch (kind) {
      case EwKind::Add: as_array(out) = as_array(a) + as_array(b); break;
      case EwKind::Mul: as_array(out) = as_array(a) * as_array(b); break;
      case EwKind::Div: as_array(out) = as_array(a) / (as_array(b) + eps); break;
    }
  } else {
    const S* av = a.data();
    const S* bv = b.data();
    S* ov = out.data();
    switch (kind) {
      case EwKind::Add:
        for_each_broadcast(a.shape(), b.shape(),
                           [&](std::int64_t ia, std::int64_t ib) { ov[ia] = av[ia] + bv[ib]; });
        break;
      case EwKind::Mul:
        for_each_broadcast(a.shape(), b.shape(),
                           [&](std::int64_t ia, std::int64_t ib) { ov[ia] = av[ia] * bv[ib]; });
        break;
      case EwKind::Div:
        for_each_broadcast(a.shape(), b.shape(), [&](std::int64_t ia, std::int64_t ib) {
          ov[ia] = av[ia] / (bv[ib] + eps);
        });
        break;
    }
  }
  require_finite(out, name);
  if (!g.recording()) return out;
  const auto ia = g.track(a), ib = g.track(b);
  typename Graph<S>::BackwardFn fn;
  if (g.any_needs({ia, ib})) {
    fn = [a, b, ia, ib, kind, eps](Graph<S>& gg, const AlignedVec<S>& go) {
      const bool na = gg.needs_grad(ia);
      const bool nb = gg.needs_grad(ib);
      S* da = na ? gg.grad_of(ia).data() : nullptr;
      S* db = nb ? gg.grad_of(ib).data() : nullptr;
      const S* av = a.data();
      const S* bv = b.data();
      for_each_broadcast(a.shape(), b.shape(), [&](std::int64_t i, std::int64_t j) {
        const S gv = go[static_cast<std::size_t>(i)];
        switch (kind) {
          case EwKind::Add:
            if (na) da[i] += gv;
            if (nb) db[j] += gv;
            break;
          case EwKind::Mul:
            if (na) da[i] += gv * bv[j];
            if (nb) db[j] += gv * av[i];
            break;
          case EwKind::Div: {
            const S denom = bv[j] + eps;
            if (na) da[i] += gv / denom;
            if (nb) db[j] -= gv * av[i] / (denom * denom);
            break;
          }
        }
      });
    };
  }
  return g.emit(std::move(out), {ia, ib}, std::move(fn));
}

}  // namespace detail

template <typename S>
Tensor<S> add(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  return detail::elementwise(g, a, b, detail::EwKind::Add, "add");
}

template <typename S>
Tensor<S> mul(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  return detail::elementwise(g, a, b, detail::EwKind::Mul, "mul");
}

/// Elementwise a / (b + eps); the epsilon guards zero denominators.
template <typename S>
Tensor<S> div(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  return detail::elementwise(g, a, b, detail::EwKind::Div, "div");
}

template <typename S>
Tensor<S> scale(Graph<S>& g, const Tensor<S>& x, double c) {
  if (x.empty()) throw ShapeError("scale on empty tensor");
  Tensor<S> out(x.shape());
  as_array(out) = as_array(x) * S(c);
  require_finite(out, "scale");
  if (!g.recording()) return out;
  const auto ix = g.track(x);
  typename Graph<S>::BackwardFn fn;
  if (g.needs_grad(ix)) {
    fn = [ix, c](Graph<S>& gg, const AlignedVec<S>& go) {
      auto& dx = gg.grad_of(ix);
      ArrMap<S>(dx.data(), static_cast<std::int64_t>(dx.size())) +=
          ConstArrMap<S>(go.data(), static_cast<std::int64_t>(go.size())) * S(c);
    };
  }
  return g.emit(std::move(out), {ix}, std::move(fn));
}

/// Reduction to a single-element tensor.
template <typename S>
Tensor<S> sum(Graph<S>& g, const Tensor<S>& x) {
  if (x.empty()) throw ShapeError("sum on empty tensor");
  Tensor<S> out(Shape{1});
  out.data()[0] = as_array(x).sum();
  require_finite(out, "sum");
  if (!g.recording()) return out;
  const auto ix = g.track(x);
  typename Graph<S>::BackwardFn fn;
  if (g.needs_grad(ix)) {
    fn = [ix](Graph<S>& gg, const AlignedVec<S>& go) {
      auto& dx = gg.grad_of(ix);
      ArrMap<S>(dx.data(), static_cast<std::int64_t>(dx.size())) += go[0];
    };
  }
  return g.emit(std::move(out), {ix}, std::move(fn));
}

/// Same data, new shape. Gradient passes through unchanged.
template <typename S>
Tensor<S> reshape(Graph<S>& g, const Tensor<S>& x, const Shape& shape) {
  Tensor<S> out = x.reshaped(shape);
  if (!g.recording()) return out;
  const auto ix = g.track(x);
  typename Graph<S>::BackwardFn fn;
  if (g.needs_grad(ix)) {
    fn = [ix](Graph<S>& gg, const AlignedVec<S>& go) {
      auto& dx = gg.grad_of(ix);
      for (std::size_t i = 0; i < go.size(); ++i) dx[i] += go[i];
    };
  }
  return g.emit(std::move(out), {ix}, std::move(fn));
}

}  // namespace seanet
