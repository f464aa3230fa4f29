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

// Convolutional recurrent cells.
//
// Gate convolutions that read the same input are stored stacked along the
// output-channel axis so that each input is convolved once per step. The
// stacking order is part of the parameter layout and is documented on each
// params struct; slice k of a stacked weight holds output channels
// [k*C, (k+1)*C).
//
//   ConvLSTM       g = tanh(Wxg*X + Whg*H + bg)
//                  i = σ(Wxi*X + Whi*H + Wci⊙C + bi)
//                  f = σ(Wxf*X + Whf*H + Wcf⊙C + bf)
//                  C' = f⊙C + i⊙g
//                  o = σ(Wxo*X + Who*H + Wco⊙C' + bo)
//                  H' = o⊙tanh(C')
//
//   memory flow    as ConvLSTM, but the state inputs are the layer below at
//                  the same step (H_below, M_below), the memory couplings are
//                  convolutions, and X only enters layer 1.
//
//   ST-LSTM        temporal branch (g, i, f) reads X and H_prev and updates C;
//                  spatiotemporal branch (g', i', f') reads X and M_below and
//                  updates M; o reads X, H_prev, C', M';
//                  H' = o⊙tanh(W1x1*[C', M']).

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "stpred/autodiff.hpp"
#include "stpred/errors.hpp"
#include "stpred/ops.hpp"
#include "stpred/rng.hpp"
#include "stpred/tensor.hpp"

namespace stpred {

namespace detail {

// Uniform in ±sqrt(1/fan_in), fan_in = Ci*kh*kw.
template <typename S>
ParameterT<S> conv_weight(std::string name, int co, int ci, int k, Rng& rng) {
  TensorT<S> w(nchw(co, ci, k, k));
  const double bound = std::sqrt(1.0 / (static_cast<double>(ci) * k * k));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<S>(rng.uniform(-bound, bound));
  return ParameterT<S>(std::move(name), std::move(w));
}

template <typename S>
ParameterT<S> zero_param(std::string name, Shape shape) {
  return ParameterT<S>(std::move(name), TensorT<S>(shape));
}

template <typename S>
VarT<S> gate(const VarT<S>& stacked, int index, int channels) {
  return slice_channels(stacked, index * channels, channels);
}

inline void check_state(const Shape& x, const Shape& h, const Shape& c, const char* what) {
  require_rank4(x, what);
  require_rank4(h, what);
  if (x.n() != h.n() || x.h() != h.h() || x.w() != h.w()) {
    throw ShapeError(std::string(what) + ": input " + x.str() + " and state " + h.str() + " disagree on N/H/W");
  }
  require_same(h, c, what);
}

}  // namespace detail

// Per-step gate record. temporal_inc = i⊙g and forget = f for the C (or M,
// for the memory-flow cell) update; the primed fields are only set by ST-LSTM.
template <typename S>
struct GateCacheT {
  VarT<S> temporal_inc;
  VarT<S> spatiotemporal_inc;
  VarT<S> forget;
  VarT<S> forget_prime;
  int layer = 0;
  int step = 0;

  bool has_spatiotemporal() const { return spatiotemporal_inc.valid(); }
};

// ---------------------------------------------------------------------------
// ConvLSTM
// ---------------------------------------------------------------------------

// w_x: [4C, Cin, k, k] and w_h: [4C, C, k, k], gate order (g, i, f, o).
// b: [4C]. Peepholes w_ci, w_cf, w_co: [1, C, H, W].
template <typename S>
struct ConvLstmParamsT {
  int channels = 0;
  ParameterT<S> w_x, w_h, b, w_ci, w_cf, w_co;

  static ConvLstmParamsT init(const std::string& prefix, int in_channels, int channels, int kernel, int height,
                              int width, Rng& rng) {
    ConvLstmParamsT p;
    p.channels = channels;
    p.w_x = detail::conv_weight<S>(prefix + "w_x", 4 * channels, in_channels, kernel, rng);
    p.w_h = detail::conv_weight<S>(prefix + "w_h", 4 * channels, channels, kernel, rng);
    p.b = detail::zero_param<S>(prefix + "b", Shape{4 * channels});
    p.w_ci = detail::zero_param<S>(prefix + "w_ci", nchw(1, channels, height, width));
    p.w_cf = detail::zero_param<S>(prefix + "w_cf", nchw(1, channels, height, width));
    p.w_co = detail::zero_param<S>(prefix + "w_co", nchw(1, channels, height, width));
    return p;
  }

  std::vector<ParameterT<S>*> parameters() { return {&w_x, &w_h, &b, &w_ci, &w_cf, &w_co}; }
};

template <typename S>
struct ConvLstmOut {
  VarT<S> h, c;
  GateCacheT<S> cache;
};

template <typename S>
ConvLstmOut<S> convlstm_step(const VarT<S>& x, const VarT<S>& h_prev, const VarT<S>& c_prev,
                             ConvLstmParamsT<S>& p) {
  detail::check_state(x.shape(), h_prev.shape(), c_prev.shape(), "convlstm_step");
  if (h_prev.shape().c() != p.channels) throw ShapeError("convlstm_step: state channels differ from params");
  auto& t = x.tape();
  const int C = p.channels;
  VarT<S> z = add(conv2d(x, t.param(p.w_x), t.param(p.b)), conv2d(h_prev, t.param(p.w_h)));
  VarT<S> g = tanh(detail::gate(z, 0, C));
  VarT<S> i = sigmoid(add(detail::gate(z, 1, C), hadamard(c_prev, t.param(p.w_ci))));
  VarT<S> f = sigmoid(add(detail::gate(z, 2, C), hadamard(c_prev, t.param(p.w_cf))));
  VarT<S> inc = hadamard(i, g);
  VarT<S> c = add(hadamard(f, c_prev), inc);
  VarT<S> o = sigmoid(add(detail::gate(z, 3, C), hadamard(c, t.param(p.w_co))));
  VarT<S> h = hadamard(o, tanh(c));
  GateCacheT<S> cache;
  cache.temporal_inc = inc;
  cache.forget = f;
  return {h, c, cache};
}

// ---------------------------------------------------------------------------
// Memory-flow ConvLSTM
// ---------------------------------------------------------------------------

// w_x: [4C, Cin, k, k] (layer 1 only) and w_h: [4C, C, k, k], gate order
// (g, i, f, o). b: [4C]. w_m: [2C, C, k, k] holds the (i, f) couplings to
// M_below; w_mo: [C, C, k, k] couples the updated M into o.
template <typename S>
struct MFlowParamsT {
  int channels = 0;
  bool has_input = false;
  ParameterT<S> w_x, w_h, b, w_m, w_mo;

  static MFlowParamsT init(const std::string& prefix, bool first_layer, int in_channels, int channels, int kernel,
                           Rng& rng) {
    MFlowParamsT p;
    p.channels = channels;
    p.has_input = first_layer;
    if (first_layer) p.w_x = detail::conv_weight<S>(prefix + "w_x", 4 * channels, in_channels, kernel, rng);
    p.w_h = detail::conv_weight<S>(prefix + "w_h", 4 * channels, channels, kernel, rng);
    p.b = detail::zero_param<S>(prefix + "b", Shape{4 * channels});
    p.w_m = detail::conv_weight<S>(prefix + "w_m", 2 * channels, channels, kernel, rng);
    p.w_mo = detail::conv_weight<S>(prefix + "w_mo", channels, channels, kernel, rng);
    return p;
  }

  std::vector<ParameterT<S>*> parameters() {
    if (has_input) return {&w_x, &w_h, &b, &w_m, &w_mo};
    return {&w_h, &b, &w_m, &w_mo};
  }
};

template <typename S>
struct MFlowOut {
  VarT<S> h, m;
  GateCacheT<S> cache;
};

// layer_index is 1-based. For layer 1, h_below/m_below are the top layer's
// states from the previous step.
template <typename S>
MFlowOut<S> mflow_step(const std::optional<VarT<S>>& x, const VarT<S>& h_below, const VarT<S>& m_below,
                       int layer_index, MFlowParamsT<S>& p) {
  if (layer_index < 1) throw ContractError("mflow_step: layer_index is 1-based");
  if (x.has_value() != (layer_index == 1)) {
    throw ContractError("mflow_step: the input frame must be supplied exactly at layer 1");
  }
  if (x.has_value() != p.has_input) throw ContractError("mflow_step: params were built for a different layer");
  detail::check_state(h_below.shape(), h_below.shape(), m_below.shape(), "mflow_step");
  if (x) detail::check_state(x->shape(), h_below.shape(), m_below.shape(), "mflow_step");
  auto& t = h_below.tape();
  const int C = p.channels;
  VarT<S> z = conv2d(h_below, t.param(p.w_h), t.param(p.b));
  if (x) z = add(z, conv2d(*x, t.param(p.w_x)));
  VarT<S> zm = conv2d(m_below, t.param(p.w_m));
  VarT<S> g = tanh(detail::gate(z, 0, C));
  VarT<S> i = sigmoid(add(detail::gate(z, 1, C), detail::gate(zm, 0, C)));
  VarT<S> f = sigmoid(add(detail::gate(z, 2, C), detail::gate(zm, 1, C)));
  VarT<S> inc = hadamard(i, g);
  VarT<S> m = add(hadamard(f, m_below), inc);
  VarT<S> o = sigmoid(add(detail::gate(z, 3, C), conv2d(m, t.param(p.w_mo))));
  VarT<S> h = hadamard(o, tanh(m));
  GateCacheT<S> cache;
  cache.temporal_inc = inc;
  cache.forget = f;
  return {h, m, cache};
}

// ---------------------------------------------------------------------------
// ST-LSTM
// ---------------------------------------------------------------------------

// w_x: [7C, Cin, k, k], gate order (g, i, f, g', i', f', o), with b: [7C].
// w_h: [4C, C, k, k], order (g, i, f, o). w_m: [3C, C, k, k], order
// (g', i', f'). w_o: [C, 2C, k, k] over [C', M'] (input channels [0, C) are
// W_co, [C, 2C) are W_mo). w_1x1: [C, 2C, 1, 1] over [C', M'].
template <typename S>
struct StLstmParamsT {
  int channels = 0;
  ParameterT<S> w_x, b, w_h, w_m, w_o, w_1x1;

  static StLstmParamsT init(const std::string& prefix, int in_channels, int channels, int kernel, Rng& rng) {
    StLstmParamsT p;
    p.channels = channels;
    p.w_x = detail::conv_weight<S>(prefix + "w_x", 7 * channels, in_channels, kernel, rng);
    p.b = detail::zero_param<S>(prefix + "b", Shape{7 * channels});
    p.w_h = detail::conv_weight<S>(prefix + "w_h", 4 * channels, channels, kernel, rng);
    p.w_m = detail::conv_weight<S>(prefix + "w_m", 3 * channels, channels, kernel, rng);
    p.w_o = detail::conv_weight<S>(prefix + "w_o", channels, 2 * channels, kernel, rng);
    p.w_1x1 = detail::conv_weight<S>(prefix + "w_1x1", channels, 2 * channels, 1, rng);
    return p;
  }

  std::vector<ParameterT<S>*> parameters() { return {&w_x, &b, &w_h, &w_m, &w_o, &w_1x1}; }
};

template <typename S>
struct StLstmOut {
  VarT<S> h, c, m;
  GateCacheT<S> cache;
};

template <typename S>
StLstmOut<S> stlstm_step(const VarT<S>& x, const VarT<S>& h_prev, const VarT<S>& c_prev, const VarT<S>& m_below,
                         StLstmParamsT<S>& p) {
  detail::check_state(x.shape(), h_prev.shape(), c_prev.shape(), "stlstm_step");
  require_same(c_prev.shape(), m_below.shape(), "stlstm_step");
  if (h_prev.shape().c() != p.channels) throw ShapeError("stlstm_step: state channels differ from params");
  auto& t = x.tape();
  const int C = p.channels;
  VarT<S> zx = conv2d(x, t.param(p.w_x), t.param(p.b));
  VarT<S> zh = conv2d(h_prev, t.param(p.w_h));
  VarT<S> zm = conv2d(m_below, t.param(p.w_m));

  VarT<S> g = tanh(add(detail::gate(zx, 0, C), detail::gate(zh, 0, C)));
  VarT<S> i = sigmoid(add(detail::gate(zx, 1, C), detail::gate(zh, 1, C)));
  VarT<S> f = sigmoid(add(detail::gate(zx, 2, C), detail::gate(zh, 2, C)));
  VarT<S> inc_c = hadamard(i, g);
  VarT<S> c = add(hadamard(f, c_prev), inc_c);

  VarT<S> gp = tanh(add(detail::gate(zx, 3, C), detail::gate(zm, 0, C)));
  VarT<S> ip = sigmoid(add(detail::gate(zx, 4, C), detail::gate(zm, 1, C)));
  VarT<S> fp = sigmoid(add(detail::gate(zx, 5, C), detail::gate(zm, 2, C)));
  VarT<S> inc_m = hadamard(ip, gp);
  VarT<S> m = add(hadamard(fp, m_below), inc_m);

  VarT<S> cm = concat_channels(c, m);
  VarT<S> o = sigmoid(add(add(detail::gate(zx, 6, C), detail::gate(zh, 3, C)), conv2d(cm, t.param(p.w_o))));
  VarT<S> h = hadamard(o, tanh(conv2d(cm, t.param(p.w_1x1))));

  GateCacheT<S> cache;
  cache.temporal_inc = inc_c;
  cache.spatiotemporal_inc = inc_m;
  cache.forget = f;
  cache.forget_prime = fp;
  return {h, c, m, cache};
}

// ---------------------------------------------------------------------------
// Action fusion
// ---------------------------------------------------------------------------

// The action vector [N, d_a, 1, 1] is embedded to C channels by w_embed/b_embed
// (a 1x1 convolution), tiled to the state resolution, then
// V = (w_hv * H_prev) ⊙ (w_av * tiled).
template <typename S>
struct ActionFuseParamsT {
  int channels = 0;
  int action_dim = 0;
  ParameterT<S> w_embed, b_embed, w_hv, w_av;

  static ActionFuseParamsT init(const std::string& prefix, int action_dim, int channels, int kernel, Rng& rng) {
    ActionFuseParamsT p;
    p.channels = channels;
    p.action_dim = action_dim;
    p.w_embed = detail::conv_weight<S>(prefix + "w_embed", channels, action_dim, 1, rng);
    p.b_embed = detail::zero_param<S>(prefix + "b_embed", Shape{channels});
    p.w_hv = detail::conv_weight<S>(prefix + "w_hv", channels, channels, kernel, rng);
    p.w_av = detail::conv_weight<S>(prefix + "w_av", channels, channels, kernel, rng);
    return p;
  }

  std::vector<ParameterT<S>*> parameters() { return {&w_embed, &b_embed, &w_hv, &w_av}; }
};

template <typename S>
VarT<S> action_fuse(const VarT<S>& h_prev, const VarT<S>& action, ActionFuseParamsT<S>& p) {
  require_rank4(h_prev.shape(), "action_fuse");
  const Shape& as = action.shape();
  if (as.rank() != 4 || as.c() != p.action_dim || as.h() != 1 || as.w() != 1 || as.n() != h_prev.shape().n()) {
    throw ShapeError("action_fuse: expected action [" + std::to_string(h_prev.shape().n()) + "x" +
                     std::to_string(p.action_dim) + "x1x1], got " + as.str());
  }
  auto& t = h_prev.tape();
  VarT<S> embedded = conv2d(action, t.param(p.w_embed), t.param(p.b_embed));
  VarT<S> tiled = broadcast_spatial(embedded, h_prev.shape().h(), h_prev.shape().w());
  return hadamard(conv2d(h_prev, t.param(p.w_hv)), conv2d(tiled, t.param(p.w_av)));
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct SaturationRatio {
  double ratio_f = 0.0;
  std::optional<double> ratio_fprime;  // only for caches with a spatiotemporal branch
};

// Fraction of forget-gate activations strictly below threshold.
template <typename S>
SaturationRatio forget_saturation(std::span<const GateCacheT<S>> caches, double threshold = 0.1) {
  if (caches.empty()) throw ContractError("forget_saturation: empty gate cache");
  std::size_t below = 0, total = 0, below_p = 0, total_p = 0;
  for (const auto& c : caches) {
    for (S v : c.forget.value().data()) below += static_cast<double>(v) < threshold;
    total += c.forget.value().size();
    if (c.forget_prime.valid()) {
      for (S v : c.forget_prime.value().data()) below_p += static_cast<double>(v) < threshold;
      total_p += c.forget_prime.value().size();
    }
  }
  SaturationRatio r;
  r.ratio_f = static_cast<double>(below) / static_cast<double>(total);
  if (total_p > 0) r.ratio_fprime = static_cast<double>(below_p) / static_cast<double>(total_p);
  return r;
}

template <typename S>
SaturationRatio forget_saturation(const std::vector<GateCacheT<S>>& caches, double threshold = 0.1) {
  return forget_saturation<S>(std::span<const GateCacheT<S>>(caches), threshold);
}

}  // namespace stpred
