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

// Scalar-loop reference transcriptions of the recurrent cells, shared by the
// unit tests and the acceptance binary.

#pragma once

#include <cmath>
#include <vector>

#include "test_util.hpp"

namespace stpred::oracle {

using D = TensorT<double>;
using Vec = std::vector<double>;

inline double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Rows [g*C, (g+1)*C) of a stacked [G*C, Cin, k, k] weight, i.e. one gate's
// convolution, applied with the nested-loop oracle.
inline Vec gate_conv(const D& x, const D& stacked, int g, int C, const D* bias = nullptr) {
  const Shape& ws = stacked.shape();
  const std::size_t per = static_cast<std::size_t>(C) * ws[1] * ws[2] * ws[3];
  Vec w(stacked.data().begin() + g * per, stacked.data().begin() + (g + 1) * per);
  Vec b;
  if (bias) b.assign(bias->data().begin() + g * C, bias->data().begin() + (g + 1) * C);
  const Shape& xs = x.shape();
  return testing::conv_oracle(testing::to_double(x), xs.n(), xs.c(), xs.h(), xs.w(), w, C, ws[2],
                              bias ? &b : nullptr);
}

inline Vec full_conv(const Vec& x, const Shape& xs, const D& w) {
  return testing::conv_oracle(x, xs.n(), xs.c(), xs.h(), xs.w(), testing::to_double(w), w.shape()[0], w.shape()[2],
                              nullptr);
}

inline Vec operator+(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline void randomize(std::vector<ParameterT<double>*> ps, Rng& r, double amp) {
  for (auto* p : ps) {
    for (auto& v : p->value.data()) v = r.uniform(-amp, amp);
  }
}

inline double max_diff(const D& a, const Vec& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Oracles: one scalar loop per element over precomputed gate pre-activations.
// ---------------------------------------------------------------------------

struct ConvLstmRef {
  Vec h, c;
};

inline ConvLstmRef convlstm_oracle(const D& x, const D& h_prev, const D& c_prev, const ConvLstmParamsT<double>& p) {
  const int C = p.channels;
  Vec zg = gate_conv(x, p.w_x.value, 0, C, &p.b.value) + gate_conv(h_prev, p.w_h.value, 0, C);
  Vec zi = gate_conv(x, p.w_x.value, 1, C, &p.b.value) + gate_conv(h_prev, p.w_h.value, 1, C);
  Vec zf = gate_conv(x, p.w_x.value, 2, C, &p.b.value) + gate_conv(h_prev, p.w_h.value, 2, C);
  Vec zo = gate_conv(x, p.w_x.value, 3, C, &p.b.value) + gate_conv(h_prev, p.w_h.value, 3, C);
  const Shape& s = h_prev.shape();
  const std::size_t plane = static_cast<std::size_t>(C) * s.h() * s.w();
  ConvLstmRef r{Vec(zg.size()), Vec(zg.size())};
  for (std::size_t e = 0; e < zg.size(); ++e) {
    const std::size_t pe = e % plane;  // peepholes are shared across the batch
    const double cp = c_prev[e];
    const double g = std::tanh(zg[e]);
    const double i = sig(zi[e] + p.w_ci.value[pe] * cp);
    const double f = sig(zf[e] + p.w_cf.value[pe] * cp);
    const double c = f * cp + i * g;
    const double o = sig(zo[e] + p.w_co.value[pe] * c);
    r.c[e] = c;
    r.h[e] = o * std::tanh(c);
  }
  return r;
}

struct MFlowRef {
  Vec h, m;
};

inline MFlowRef mflow_oracle(const D* x, const D& h_below, const D& m_below, const MFlowParamsT<double>& p) {
  const int C = p.channels;
  Vec z[4];
  for (int g = 0; g < 4; ++g) {
    z[g] = gate_conv(h_below, p.w_h.value, g, C, &p.b.value);
    if (x) z[g] = z[g] + gate_conv(*x, p.w_x.value, g, C);
  }
  Vec zmi = gate_conv(m_below, p.w_m.value, 0, C);
  Vec zmf = gate_conv(m_below, p.w_m.value, 1, C);
  MFlowRef r{Vec(z[0].size()), Vec(z[0].size())};
  for (std::size_t e = 0; e < r.m.size(); ++e) {
    const double g = std::tanh(z[0][e]);
    const double i = sig(z[1][e] + zmi[e]);
    const double f = sig(z[2][e] + zmf[e]);
    r.m[e] = f * m_below[e] + i * g;
  }
  Vec zmo = full_conv(r.m, m_below.shape(), p.w_mo.value);
  for (std::size_t e = 0; e < r.m.size(); ++e) r.h[e] = sig(z[3][e] + zmo[e]) * std::tanh(r.m[e]);
  return r;
}

struct StLstmRef {
  Vec h, c, m, inc_c, inc_m, f, fp;
};

inline StLstmRef stlstm_oracle(const D& x, const D& h_prev, const D& c_prev, const D& m_below,
                               const StLstmParamsT<double>& p) {
  const int C = p.channels;
  const D& wx = p.w_x.value;
  const D* b = &p.b.value;
  Vec g_pre = gate_conv(x, wx, 0, C, b) + gate_conv(h_prev, p.w_h.value, 0, C);
  Vec i_pre = gate_conv(x, wx, 1, C, b) + gate_conv(h_prev, p.w_h.value, 1, C);
  Vec f_pre = gate_conv(x, wx, 2, C, b) + gate_conv(h_prev, p.w_h.value, 2, C);
  Vec gp_pre = gate_conv(x, wx, 3, C, b) + gate_conv(m_below, p.w_m.value, 0, C);
  Vec ip_pre = gate_conv(x, wx, 4, C, b) + gate_conv(m_below, p.w_m.value, 1, C);
  Vec fp_pre = gate_conv(x, wx, 5, C, b) + gate_conv(m_below, p.w_m.value, 2, C);
  Vec o_pre = gate_conv(x, wx, 6, C, b) + gate_conv(h_prev, p.w_h.value, 3, C);
  const std::size_t n = g_pre.size();
  StLstmRef r{Vec(n), Vec(n), Vec(n), Vec(n), Vec(n), Vec(n), Vec(n)};
  for (std::size_t e = 0; e < n; ++e) {
    r.f[e] = sig(f_pre[e]);
    r.inc_c[e] = sig(i_pre[e]) * std::tanh(g_pre[e]);
    r.c[e] = r.f[e] * c_prev[e] + r.inc_c[e];
    r.fp[e] = sig(fp_pre[e]);
    r.inc_m[e] = sig(ip_pre[e]) * std::tanh(gp_pre[e]);
    r.m[e] = r.fp[e] * m_below[e] + r.inc_m[e];
  }
  // [C, M] concatenation along channels, C first.
  const Shape& s = c_prev.shape();
  const std::size_t plane = static_cast<std::size_t>(s.h()) * s.w();
  const Shape cat = nchw(s.n(), 2 * C, s.h(), s.w());
  Vec cm(cat.numel());
  for (int bn = 0; bn < s.n(); ++bn)
    for (int ch = 0; ch < 2 * C; ++ch)
      for (std::size_t q = 0; q < plane; ++q) {
        const Vec& src = ch < C ? r.c : r.m;
        cm[(static_cast<std::size_t>(bn) * 2 * C + ch) * plane + q] =
            src[(static_cast<std::size_t>(bn) * C + (ch % C)) * plane + q];
      }
  Vec oc = full_conv(cm, cat, p.w_o.value);
  Vec fused = full_conv(cm, cat, p.w_1x1.value);
  for (std::size_t e = 0; e < n; ++e) r.h[e] = sig(o_pre[e] + oc[e]) * std::tanh(fused[e]);
  return r;
}

}  // namespace stpred::oracle
