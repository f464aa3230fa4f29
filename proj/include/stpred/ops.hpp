// Copyright 2026 The stpred Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Differentiable tensor operations recorded on a TapeT. Every op validates
// shapes eagerly and throws ShapeError on mismatch. There is no general
// broadcasting: the only implicit expansion is a batch-1 right operand in
// hadamard(), which the peephole weights need.

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <optional>
#include <type_traits>
#include <span>
#include <string>
#include <vector>

#include "stpred/autodiff.hpp"
#include "stpred/errors.hpp"
#include "stpred/tensor.hpp"

namespace stpred {

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Geometry of a stride-1 "same" convolution.
struct ConvGeom {
  int n, ci, h, w, co, kh, kw;
  int ph() const { return (kh - 1) / 2; }
  int pw() const { return (kw - 1) / 2; }
  std::size_t rows() const { return static_cast<std::size_t>(ci) * kh * kw; }
  std::size_t cols() const { return static_cast<std::size_t>(n) * h * w; }
};

// Unfolds input [N,Ci,H,W] into a [Ci*kh*kw, N*H*W] row-major matrix.
template <typename S>
void im2col(const S* x, const ConvGeom& g, S* cols) {
  const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
  const std::size_t ncols = g.cols();
  for (int c = 0; c < g.ci; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        S* row = cols + ((static_cast<std::size_t>(c) * g.kh + ky) * g.kw + kx) * ncols;
        const int dy = ky - g.ph();
        const int dx = kx - g.pw();
        for (int n = 0; n < g.n; ++n) {
          const S* src = x + (static_cast<std::size_t>(n) * g.ci + c) * plane;
          S* dst = row + n * plane;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(g.w, g.w - dx);
          for (int y = 0; y < g.h; ++y) {
            const int sy = y + dy;
            S* drow = dst + static_cast<std::size_t>(y) * g.w;
            if (sy < 0 || sy >= g.h || x0 >= x1) {
              std::fill(drow, drow + g.w, S(0));
              continue;
            }
            const S* srow = src + static_cast<std::size_t>(sy) * g.w;
            std::fill(drow, drow + x0, S(0));
            std::copy(srow + x0 + dx, srow + x1 + dx, drow + x0);
            std::fill(drow + x1, drow + g.w, S(0));
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds columns back into dx.
template <typename S>
void col2im(const S* cols, const ConvGeom& g, S* dx) {
  const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
  const std::size_t ncols = g.cols();
  for (int c = 0; c < g.ci; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const S* row = cols + ((static_cast<std::size_t>(c) * g.kh + ky) * g.kw + kx) * ncols;
        const int dy = ky - g.ph();
        const int dx_off = kx - g.pw();
        for (int n = 0; n < g.n; ++n) {
          S* dst = dx + (static_cast<std::size_t>(n) * g.ci + c) * plane;
          const S* src = row + n * plane;
          for (int y = 0; y < g.h; ++y) {
            const int sy = y + dy;
            if (sy < 0 || sy >= g.h) continue;
            const S* srow = src + static_cast<std::size_t>(y) * g.w;
            S* drow = dst + static_cast<std::size_t>(sy) * g.w;
            const int x0 = std::max(0, -dx_off);
            const int x1 = std::min(g.w, g.w - dx_off);
            for (int xx = x0; xx < x1; ++xx) drow[xx + dx_off] += srow[xx];
          }
        }
      }
    }
  }
}

template <typename S>
Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> array_of(TensorT<S>& t) {
  return {t.ptr(), static_cast<Eigen::Index>(t.size())};
}

template <typename S>
Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> array_of(const TensorT<S>& t) {
  return {t.ptr(), static_cast<Eigen::Index>(t.size())};
}

template <typename S, typename F>
TensorT<S> map_values(const TensorT<S>& x, F f) {
  TensorT<S> out(x.shape());
  const S* in = x.ptr();
  S* o = out.ptr();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = f(in[i]);
  return out;
}

}  // namespace detail

// Stride-1 convolution with zero "same" padding. Kernels must be odd.
// weight: [Co, Ci, kh, kw]; bias: [Co] (optional).
template <typename S>
VarT<S> conv2d(const VarT<S>& x, const VarT<S>& weight, std::optional<std::type_identity_t<VarT<S>>> bias = std::nullopt) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require_rank4(xs, "conv2d input");
  require_rank4(ws, "conv2d weight");
  if (ws[1] != xs.c()) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c()) + " channels, weight expects " +
                     std::to_string(ws[1]));
  }
  if (ws[2] % 2 == 0 || ws[3] % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd, got " + ws.str());
  if (bias && !(bias->shape() == Shape{ws[0]})) {
    throw ShapeError("conv2d: bias shape " + bias->shape().str() + " does not match " + std::to_string(ws[0]) +
                     " output channels");
  }
  const detail::ConvGeom g{xs.n(), xs.c(), xs.h(), xs.w(), ws[0], ws[2], ws[3]};
  const std::size_t plane = xs.plane();
  const std::size_t ncols = g.cols();
  const std::size_t krows = g.rows();

  // Fully overwritten by im2col, so left uninitialised.
  std::shared_ptr<S[]> cols(new S[krows * ncols]);
  detail::im2col(x.value().ptr(), g, cols.get());

  using Mat = detail::RowMat<S>;
  Eigen::Map<const Mat> wmat(weight.value().ptr(), g.co, static_cast<Eigen::Index>(krows));
  Eigen::Map<const Mat> cmat(cols.get(), static_cast<Eigen::Index>(krows), static_cast<Eigen::Index>(ncols));
  Mat omat(g.co, static_cast<Eigen::Index>(ncols));
  omat.noalias() = wmat * cmat;

  TensorT<S> out(nchw(g.n, g.co, g.h, g.w));
  for (int n = 0; n < g.n; ++n) {
    for (int co = 0; co < g.co; ++co) {
      const S b = bias ? bias->value()[co] : S(0);
      const S* src = omat.data() + static_cast<std::size_t>(co) * ncols + n * plane;
      S* dst = out.ptr() + (static_cast<std::size_t>(n) * g.co + co) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
    }
  }

  auto& tape = x.tape();
  const bool has_bias = bias.has_value();
  const VarT<S> bvar = has_bias ? *bias : VarT<S>();
  auto backward = [x, weight, bvar, has_bias, g, cols](TapeT<S>& t, const TensorT<S>& grad) {
    const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
    const std::size_t ncols = g.cols();
    const std::size_t krows = g.rows();
    Mat dout(g.co, static_cast<Eigen::Index>(ncols));
    for (int n = 0; n < g.n; ++n) {
      for (int co = 0; co < g.co; ++co) {
        const S* src = grad.ptr() + (static_cast<std::size_t>(n) * g.co + co) * plane;
        std::copy(src, src + plane, dout.data() + static_cast<std::size_t>(co) * ncols + n * plane);
      }
    }
    if (TensorT<S>* dw = t.grad_buffer(weight)) {
      Eigen::Map<const Mat> cmat(cols.get(), static_cast<Eigen::Index>(krows), static_cast<Eigen::Index>(ncols));
      Eigen::Map<Mat> dwmat(dw->ptr(), g.co, static_cast<Eigen::Index>(krows));
      dwmat.noalias() += dout * cmat.transpose();
    }
    if (has_bias) {
      if (TensorT<S>* db = t.grad_buffer(bvar)) {
        for (int co = 0; co < g.co; ++co) (*db)[co] += dout.row(co).sum();
      }
    }
    if (TensorT<S>* dx = t.grad_buffer(x)) {
      Eigen::Map<const Mat> wmat(weight.value().ptr(), g.co, static_cast<Eigen::Index>(krows));
      Mat dcols(static_cast<Eigen::Index>(krows), static_cast<Eigen::Index>(ncols));
      dcols.noalias() = wmat.transpose() * dout;
      detail::col2im(dcols.data(), g, dx->ptr());
    }
  };
  if (has_bias) return tape.record(std::move(out), {x, weight, bvar}, std::move(backward));
  return tape.record(std::move(out), {x, weight}, std::move(backward));
}

template <typename S>
VarT<S> sigmoid(const VarT<S>& x) {
  auto y = std::make_shared<TensorT<S>>(x.shape());
  detail::array_of(*y) = detail::array_of(x.value()).logistic();
  return x.tape().record(*y, {x}, [x, y](TapeT<S>& t, const TensorT<S>& grad) {
    const auto v = detail::array_of(*y);
    if (TensorT<S>* dx = t.grad_buffer(x)) detail::array_of(*dx) += detail::array_of(grad) * v * (S(1) - v);
  });
}

template <typename S>
VarT<S> tanh(const VarT<S>& x) {
  auto y = std::make_shared<TensorT<S>>(x.shape());
  detail::array_of(*y) = detail::array_of(x.value()).tanh();
  return x.tape().record(*y, {x}, [x, y](TapeT<S>& t, const TensorT<S>& grad) {
    const auto v = detail::array_of(*y);
    if (TensorT<S>* dx = t.grad_buffer(x)) detail::array_of(*dx) += detail::array_of(grad) * (S(1) - v * v);
  });
}

template <typename S>
VarT<S> add(const VarT<S>& a, const VarT<S>& b) {
  require_same(a.shape(), b.shape(), "add");
  TensorT<S> out = a.value();
  out += b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](TapeT<S>& t, const TensorT<S>& grad) {
    t.accumulate(a, grad);
    t.accumulate(b, grad);
  });
}

template <typename S>
VarT<S> sub(const VarT<S>& a, const VarT<S>& b) {
  require_same(a.shape(), b.shape(), "sub");
  TensorT<S> out = a.value();
  const TensorT<S>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](TapeT<S>& t, const TensorT<S>& grad) {
    t.accumulate(a, grad);
    if (TensorT<S>* db = t.grad_buffer(b)) {
      for (std::size_t i = 0; i < grad.size(); ++i) (*db)[i] -= grad[i];
    }
  });
}

// Sum of several same-shaped values.
template <typename S>
VarT<S> add_n(std::span<const VarT<S>> xs) {
  if (xs.empty()) throw ContractError("add_n of an empty list");
  VarT<S> acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

// Elementwise product. b may have batch extent 1, in which case it is
// applied to every sample of a (per-element peephole weights).
template <typename S>
VarT<S> hadamard(const VarT<S>& a, const VarT<S>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const bool bcast = !(as == bs);
  if (bcast) {
    if (as.rank() != 4 || bs.rank() != 4 || bs.n() != 1 || bs.c() != as.c() || bs.h() != as.h() ||
        bs.w() != as.w()) {
      throw ShapeError("hadamard: shape mismatch " + as.str() + " vs " + bs.str());
    }
  }
  const std::size_t inner = bcast ? bs.numel() : as.numel();
  TensorT<S> out(as);
  const TensorT<S>& av = a.value();
  const TensorT<S>& bv = b.value();
  // Row-wise over blocks of `inner` elements; b repeats once per block.
  using Arr = Eigen::Array<S, Eigen::Dynamic, 1>;
  auto block = [inner](auto* p, std::size_t j) {
    using M = std::conditional_t<std::is_const_v<std::remove_pointer_t<decltype(p)>>, Eigen::Map<const Arr>,
                                 Eigen::Map<Arr>>;
    return M(p + j * inner, static_cast<Eigen::Index>(inner));
  };
  const std::size_t blocks = out.size() / inner;
  for (std::size_t j = 0; j < blocks; ++j) block(out.ptr(), j) = block(av.ptr(), j) * block(bv.ptr(), 0);
  return a.tape().record(std::move(out), {a, b}, [a, b, blocks, block](TapeT<S>& t, const TensorT<S>& grad) {
    const TensorT<S>& av = a.value();
    const TensorT<S>& bv = b.value();
    if (TensorT<S>* da = t.grad_buffer(a)) {
      for (std::size_t j = 0; j < blocks; ++j) block(da->ptr(), j) += block(grad.ptr(), j) * block(bv.ptr(), 0);
    }
    if (TensorT<S>* db = t.grad_buffer(b)) {
      for (std::size_t j = 0; j < blocks; ++j) block(db->ptr(), 0) += block(grad.ptr(), j) * block(av.ptr(), j);
    }
  });
}

template <typename S>
VarT<S> scale(const VarT<S>& x, S factor) {
  TensorT<S> out = x.value();
  out *= factor;
  return x.tape().record(std::move(out), {x}, [x, factor](TapeT<S>& t, const TensorT<S>& grad) {
    TensorT<S>* dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < grad.size(); ++i) (*dx)[i] += grad[i] * factor;
  });
}

// 1 - x, used for complementary gates.
template <typename S>
VarT<S> one_minus(const VarT<S>& x) {
  auto out = detail::map_values(x.value(), [](S v) { return S(1) - v; });
  return x.tape().record(std::move(out), {x}, [x](TapeT<S>& t, const TensorT<S>& grad) {
    TensorT<S>* dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < grad.size(); ++i) (*dx)[i] -= grad[i];
  });
}

// [N,Ca,H,W] ++ [N,Cb,H,W] -> [N,Ca+Cb,H,W], a's channels first.
template <typename S>
VarT<S> concat_channels(const VarT<S>& a, const VarT<S>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require_rank4(as, "concat_channels");
  require_rank4(bs, "concat_channels");
  if (as.n() != bs.n() || as.h() != bs.h() || as.w() != bs.w()) {
    throw ShapeError("concat_channels: N/H/W mismatch " + as.str() + " vs " + bs.str());
  }
  const std::size_t a_blk = static_cast<std::size_t>(as.c()) * as.plane();
  const std::size_t b_blk = static_cast<std::size_t>(bs.c()) * bs.plane();
  TensorT<S> out(nchw(as.n(), as.c() + bs.c(), as.h(), as.w()));
  for (int n = 0; n < as.n(); ++n) {
    const S* ap = a.value().ptr() + n * a_blk;
    const S* bp = b.value().ptr() + n * b_blk;
    S* o = out.ptr() + n * (a_blk + b_blk);
    std::copy(ap, ap + a_blk, o);
    std::copy(bp, bp + b_blk, o + a_blk);
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, a_blk, b_blk](TapeT<S>& t, const TensorT<S>& grad) {
    const int batch = a.shape().n();
    TensorT<S>* da = t.grad_buffer(a);
    TensorT<S>* db = t.grad_buffer(b);
    for (int n = 0; n < batch; ++n) {
      const S* g = grad.ptr() + n * (a_blk + b_blk);
      if (da) {
        S* d = da->ptr() + n * a_blk;
        for (std::size_t i = 0; i < a_blk; ++i) d[i] += g[i];
      }
      if (db) {
        S* d = db->ptr() + n * b_blk;
        for (std::size_t i = 0; i < b_blk; ++i) d[i] += g[a_blk + i];
      }
    }
  });
}

// Channels [start, start+count) of x.
template <typename S>
VarT<S> slice_channels(const VarT<S>& x, int start, int count) {
  const Shape& xs = x.shape();
  require_rank4(xs, "slice_channels");
  if (start < 0 || count < 1 || start + count > xs.c()) {
    throw ShapeError("slice_channels: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + std::to_string(xs.c()) + " channels");
  }
  const std::size_t plane = xs.plane();
  const std::size_t in_blk = static_cast<std::size_t>(xs.c()) * plane;
  const std::size_t out_blk = static_cast<std::size_t>(count) * plane;
  const std::size_t off = static_cast<std::size_t>(start) * plane;
  TensorT<S> out(nchw(xs.n(), count, xs.h(), xs.w()));
  for (int n = 0; n < xs.n(); ++n) {
    const S* src = x.value().ptr() + n * in_blk + off;
    std::copy(src, src + out_blk, out.ptr() + n * out_blk);
  }
  return x.tape().record(std::move(out), {x}, [x, in_blk, out_blk, off](TapeT<S>& t, const TensorT<S>& grad) {
    TensorT<S>* dx = t.grad_buffer(x);
    const int batch = x.shape().n();
    for (int n = 0; n < batch; ++n) {
      S* d = dx->ptr() + n * in_blk + off;
      const S* g = grad.ptr() + n * out_blk;
      for (std::size_t i = 0; i < out_blk; ++i) d[i] += g[i];
    }
  });
}

// Σ (pred - target)^2 over all elements, as a shape-[1] tensor.
template <typename S>
VarT<S> mse_sum(const VarT<S>& pred, const VarT<S>& target) {
  require_same(pred.shape(), target.shape(), "mse_sum");
  const TensorT<S>& p = pred.value();
  const TensorT<S>& q = target.value();
  S acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const S d = p[i] - q[i];
    acc += d * d;
  }
  TensorT<S> out(Shape{1}, acc);
  return pred.tape().record(std::move(out), {pred, target}, [pred, target](TapeT<S>& t, const TensorT<S>& grad) {
    const TensorT<S>& p = pred.value();
    const TensorT<S>& q = target.value();
    const S g = grad[0];
    TensorT<S>* dp = t.grad_buffer(pred);
    TensorT<S>* dq = t.grad_buffer(target);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const S d = S(2) * g * (p[i] - q[i]);
      if (dp) (*dp)[i] += d;
      if (dq) (*dq)[i] -= d;
    }
  });
}

template <typename S>
VarT<S> sum(const VarT<S>& x) {
  TensorT<S> out(Shape{1}, x.value().sum());
  return x.tape().record(std::move(out), {x}, [x](TapeT<S>& t, const TensorT<S>& grad) {
    TensorT<S>* dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dx->size(); ++i) (*dx)[i] += grad[0];
  });
}

// Per-sample choice: out[n] = take_a[n] ? a[n] : b[n].
template <typename S>
VarT<S> select_batch(const std::vector<bool>& take_a, const VarT<S>& a, const VarT<S>& b) {
  require_same(a.shape(), b.shape(), "select_batch");
  require_rank4(a.shape(), "select_batch");
  if (take_a.size() != static_cast<std::size_t>(a.shape().n())) {
    throw ShapeError("select_batch: mask has " + std::to_string(take_a.size()) + " entries for batch " +
                     std::to_string(a.shape().n()));
  }
  const std::size_t blk = a.value().size() / a.shape().n();
  TensorT<S> out(a.shape());
  for (std::size_t n = 0; n < take_a.size(); ++n) {
    const S* src = (take_a[n] ? a.value().ptr() : b.value().ptr()) + n * blk;
    std::copy(src, src + blk, out.ptr() + n * blk);
  }
  return a.tape().record(std::move(out), {a, b}, [take_a, a, b, blk](TapeT<S>& t, const TensorT<S>& grad) {
    TensorT<S>* da = t.grad_buffer(a);
    TensorT<S>* db = t.grad_buffer(b);
    for (std::size_t n = 0; n < take_a.size(); ++n) {
      TensorT<S>* d = take_a[n] ? da : db;
      if (!d) continue;
      for (std::size_t i = 0; i < blk; ++i) (*d)[n * blk + i] += grad[n * blk + i];
    }
  });
}

// [N,C,1,1] -> [N,C,H,W] by spatial tiling.
template <typename S>
VarT<S> broadcast_spatial(const VarT<S>& v, int h, int w) {
  const Shape& vs = v.shape();
  require_rank4(vs, "broadcast_spatial");
  if (vs.h() != 1 || vs.w() != 1) throw ShapeError("broadcast_spatial: expected [N,C,1,1], got " + vs.str());
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  TensorT<S> out(nchw(vs.n(), vs.c(), h, w));
  for (std::size_t i = 0; i < v.value().size(); ++i) {
    std::fill(out.ptr() + i * plane, out.ptr() + (i + 1) * plane, v.value()[i]);
  }
  return v.tape().record(std::move(out), {v}, [v, plane](TapeT<S>& t, const TensorT<S>& grad) {
    TensorT<S>* dv = t.grad_buffer(v);
    for (std::size_t i = 0; i < dv->size(); ++i) {
      S acc = 0;
      for (std::size_t p = 0; p < plane; ++p) acc += grad[i * plane + p];
      (*dv)[i] += acc;
    }
  });
}

}  // namespace stpred
