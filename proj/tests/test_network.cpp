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

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

namespace stpred {
namespace {

using testing::random_tensor;
using D = TensorT<double>;

NetworkConfig small_config(Variant v, int layers = 2, int channels = 2, int patch = 1, int hw = 4) {
  NetworkConfig c;
  c.variant = v;
  c.layers = layers;
  c.channels = channels;
  c.kernel = 3;
  c.patch = patch;
  c.height = c.width = hw;
  if (v == Variant::stlstm_action) c.action_dim = 2;
  return c;
}

void randomize(ModelT<double>& m, Rng& r, double amp) {
  for (auto* p : m.parameters()) {
    for (auto& v : p->value.data()) v = r.uniform(-amp, amp);
  }
}

FrameSequenceT<double> random_sequence(const NetworkConfig& c, int n, int len, Rng& r) {
  FrameSequenceT<double> s;
  for (int t = 0; t < len; ++t) s.frames.push_back(random_tensor<double>(nchw(n, c.in_channels, c.height, c.width), r, 0, 1));
  if (c.variant == Variant::stlstm_action) {
    for (int t = 0; t < len - 1; ++t) s.actions.push_back(random_tensor<double>(nchw(n, c.action_dim, 1, 1), r));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Configuration and initialisation
// ---------------------------------------------------------------------------

TEST(NetworkConfig, Validation) {
  auto c = small_config(Variant::stlstm);
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.layers = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.kernel = 4;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.patch = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.action_dim = 2;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = small_config(Variant::stlstm_action);
  bad.action_dim = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(NetworkConfig, VariantNames) {
  EXPECT_EQ(parse_variant("convlstm"), Variant::convlstm_stack);
  EXPECT_EQ(parse_variant("convlstm_stack"), Variant::convlstm_stack);
  for (Variant v : {Variant::convlstm_stack, Variant::mflow, Variant::stlstm, Variant::stlstm_action}) {
    EXPECT_EQ(parse_variant(to_string(v)), v);
  }
  EXPECT_THROW(parse_variant("predrnn"), ConfigError);
}

TEST(InitModel, SameSeedIsBitIdentical) {
  for (Variant v : {Variant::convlstm_stack, Variant::mflow, Variant::stlstm, Variant::stlstm_action}) {
    Rng a(7), b(7);
    auto ma = init_model<float>(small_config(v), a);
    auto mb = init_model<float>(small_config(v), b);
    auto pa = ma.parameters();
    auto pb = mb.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      EXPECT_EQ(pa[i]->name, pb[i]->name);
      EXPECT_EQ(pa[i]->value, pb[i]->value);
    }
  }
}

TEST(InitModel, InitRangesAndZeroBiases) {
  Rng r(8);
  auto m = init_model<double>(small_config(Variant::stlstm, 1, 4), r);
  const auto& wx = m.stlstm[0].w_x.value;
  const double bound = std::sqrt(1.0 / (1 * 9));
  EXPECT_LE(wx.max_abs(), bound);
  EXPECT_GT(wx.max_abs(), 0.5 * bound);
  EXPECT_EQ(m.stlstm[0].b.value.max_abs(), 0.0);
  ASSERT_TRUE(m.w_decouple.has_value());
  EXPECT_EQ(m.w_decouple->value.shape(), nchw(4, 4, 1, 1));
  Rng r2(8);
  EXPECT_FALSE(init_model<double>(small_config(Variant::convlstm_stack), r2).w_decouple.has_value());
}

TEST(InitModel, ParameterCountMatchesClosedForm) {
  NetworkConfig c;  // L=4, 128 channels, 5x5, p=4 on one input channel: 16 patched channels
  c.variant = Variant::stlstm;
  Rng r(9);
  auto m = init_model<float>(c, r);
  const std::size_t C = 128, k2 = 25, J = 16, L = 4;
  auto layer = [&](std::size_t cin) {
    const std::size_t from_x = 7 * C * cin * k2;     // g i f g' i' f' o
    const std::size_t from_h = 4 * C * C * k2;       // g i f o
    const std::size_t from_m = 3 * C * C * k2;       // g' i' f'
    const std::size_t o_memory = 2 * C * C * k2;     // W_co, W_mo
    const std::size_t fuse = 2 * C * C;              // 1x1 over [C, M]
    const std::size_t biases = 7 * C;
    return from_x + from_h + from_m + o_memory + fuse + biases;
  };
  const std::size_t expected = layer(J) + (L - 1) * layer(C) + J * C /* head */ + C * C /* decouple */;
  EXPECT_EQ(m.parameter_count(), expected);
}

TEST(InitModel, SingleLayerStepsWithoutError) {
  for (Variant v : {Variant::convlstm_stack, Variant::mflow, Variant::stlstm}) {
    Rng r(10);
    auto m = init_model<double>(small_config(v, 1), r);
    TapeT<double> t(false);
    auto st = zero_state(m, t, 2);
    auto out = step(m, t.constant(D(nchw(2, 1, 4, 4), 0.5)), st);
    EXPECT_EQ(out.x_hat.shape(), nchw(2, 1, 4, 4));
  }
}

// ---------------------------------------------------------------------------
// Space-to-depth
// ---------------------------------------------------------------------------

TEST(Patchify, Examples) {
  Rng r(11);
  const auto x = random_tensor<double>(nchw(2, 3, 8, 4), r);
  EXPECT_EQ(patchify(x, 1), x);
  EXPECT_EQ(unpatchify(patchify(x, 2), 2, 3), x);
  EXPECT_EQ(unpatchify(patchify(x, 4), 4, 3), x);
  const D abcd(nchw(1, 1, 2, 2), std::vector<double>{1, 2, 3, 4});
  const auto p = patchify(abcd, 2);
  ASSERT_EQ(p.shape(), nchw(1, 4, 1, 1));
  for (int c = 0; c < 4; ++c) EXPECT_EQ(p[c], c + 1.0);
  EXPECT_THROW(patchify(D(nchw(1, 1, 6, 4)), 4), ShapeError);
}

// ---------------------------------------------------------------------------
// step
// ---------------------------------------------------------------------------

TEST(Step, ZeroWeightsPredictBlack) {
  for (Variant v : {Variant::convlstm_stack, Variant::mflow, Variant::stlstm, Variant::stlstm_action}) {
    Rng r(12);
    auto cfg = small_config(v, 2, 2, 2, 4);
    auto m = init_model<double>(cfg, r);
    for (auto* p : m.parameters()) p->value.fill(0.0);
    TapeT<double> t(false);
    auto st = zero_state(m, t, 1);
    std::optional<VarT<double>> a;
    if (v == Variant::stlstm_action) a = t.constant(D(nchw(1, 2, 1, 1), 1.0));
    auto out = step(m, t.constant(random_tensor<double>(nchw(1, 1, 4, 4), r, 0, 1)), st, a);
    EXPECT_EQ(out.x_hat.value().max_abs(), 0.0);
  }
}

TEST(Step, ZeroStateAtStart) {
  Rng r(13);
  auto m = init_model<double>(small_config(Variant::stlstm), r);
  TapeT<double> t(false);
  auto st = zero_state(m, t, 3);
  EXPECT_EQ(st.m.shape(), nchw(3, 2, 4, 4));
  EXPECT_EQ(st.m.value().max_abs(), 0.0);
  ASSERT_EQ(st.h.size(), 2u);
  for (int l = 0; l < 2; ++l) {
    EXPECT_EQ(st.h[l].value().max_abs(), 0.0);
    EXPECT_EQ(st.c[l].value().max_abs(), 0.0);
  }
}

TEST(Step, ActionContract) {
  Rng r(14);
  auto m = init_model<double>(small_config(Variant::stlstm), r);
  TapeT<double> t(false);
  auto st = zero_state(m, t, 1);
  auto x = t.constant(D(nchw(1, 1, 4, 4)));
  EXPECT_THROW(step<double>(m, x, st, t.constant(D(nchw(1, 2, 1, 1)))), ContractError);
  Rng r2(14);
  auto ma = init_model<double>(small_config(Variant::stlstm_action), r2);
  auto sa = zero_state(ma, t, 1);
  EXPECT_THROW(step(ma, x, sa), ContractError);
  EXPECT_THROW(step(m, t.constant(D(nchw(1, 1, 4, 8))), st), ShapeError);
}

// Two timesteps of a 2-layer ST-LSTM wired by hand: layer 1 reads the frame
// and the top memory of the previous step, layer 2 reads H^1_t and M^1_t.
TEST(Step, StLstmMatchesManualWiring) {
  Rng r(15);
  auto m = init_model<double>(small_config(Variant::stlstm), r);
  randomize(m, r, 0.7);
  const auto x1 = random_tensor<double>(nchw(1, 1, 4, 4), r, 0, 1);
  const auto x2 = random_tensor<double>(nchw(1, 1, 4, 4), r, 0, 1);
  TapeT<double> t(false);
  auto st = zero_state(m, t, 1);
  auto o1 = step(m, t.constant(x1), st);
  auto o2 = step(m, t.constant(x2), o1.state);

  const auto z = t.constant(D(nchw(1, 2, 4, 4)));
  auto a1 = stlstm_step(t.constant(x1), z, z, z, m.stlstm[0]);
  auto b1 = stlstm_step(a1.h, z, z, a1.m, m.stlstm[1]);
  auto a2 = stlstm_step(t.constant(x2), a1.h, a1.c, b1.m, m.stlstm[0]);
  auto b2 = stlstm_step(a2.h, b1.h, b1.c, a2.m, m.stlstm[1]);
  auto head = conv2d(b2.h, t.param(m.head));

  EXPECT_EQ(o1.state.h[1].value(), b1.h.value());
  EXPECT_EQ(o2.state.h[0].value(), a2.h.value());
  EXPECT_EQ(o2.state.c[1].value(), b2.c.value());
  EXPECT_EQ(o2.state.m.value(), b2.m.value());
  EXPECT_EQ(o2.x_hat.value(), head.value());
}

TEST(Step, MFlowMatchesManualWiring) {
  Rng r(16);
  auto m = init_model<double>(small_config(Variant::mflow), r);
  randomize(m, r, 0.7);
  const auto x1 = random_tensor<double>(nchw(1, 1, 4, 4), r, 0, 1);
  const auto x2 = random_tensor<double>(nchw(1, 1, 4, 4), r, 0, 1);
  TapeT<double> t(false);
  auto o2 = step(m, t.constant(x2), step(m, t.constant(x1), zero_state(m, t, 1)).state);
  const auto z = t.constant(D(nchw(1, 2, 4, 4)));
  auto a1 = mflow_step<double>(t.constant(x1), z, z, 1, m.mflow[0]);
  auto b1 = mflow_step<double>(std::nullopt, a1.h, a1.m, 2, m.mflow[1]);
  auto a2 = mflow_step<double>(t.constant(x2), b1.h, b1.m, 1, m.mflow[0]);
  auto b2 = mflow_step<double>(std::nullopt, a2.h, a2.m, 2, m.mflow[1]);
  EXPECT_EQ(o2.state.h[1].value(), b2.h.value());
  EXPECT_EQ(o2.state.m.value(), b2.m.value());
  EXPECT_EQ(o2.x_hat.value(), conv2d(b2.h, t.param(m.head)).value());
}

TEST(Step, ZigzagRouting) {
  Rng r(17);
  const auto x = random_tensor<double>(nchw(1, 1, 4, 4), r, 0, 1);
  for (Variant v : {Variant::stlstm, Variant::convlstm_stack}) {
    auto m = init_model<double>(small_config(v), r);
    randomize(m, r, 0.7);
    TapeT<double> t(false);
    auto base = zero_state(m, t, 1);
    base.h[1] = t.constant(random_tensor<double>(nchw(1, 2, 4, 4), r));
    base.c[1] = t.constant(random_tensor<double>(nchw(1, 2, 4, 4), r));
    if (v == Variant::stlstm) base.m = t.constant(random_tensor<double>(nchw(1, 2, 4, 4), r));
    auto moved = base;  // perturb every top-layer state of step t-1
    moved.h[1] = t.constant(random_tensor<double>(nchw(1, 2, 4, 4), r));
    moved.c[1] = t.constant(random_tensor<double>(nchw(1, 2, 4, 4), r));
    if (v == Variant::stlstm) moved.m = t.constant(random_tensor<double>(nchw(1, 2, 4, 4), r));
    const auto h_base = step(m, t.constant(x), base).state.h[0].value();
    const auto h_moved = step(m, t.constant(x), moved).state.h[0].value();
    if (v == Variant::stlstm) {
      EXPECT_GT(testing::max_abs_diff(h_base, h_moved), 1e-6);
    } else {
      EXPECT_EQ(h_base, h_moved);
    }
  }
}

TEST(Step, ShapesAreStableWithPatching) {
  Rng r(18);
  auto cfg = small_config(Variant::stlstm, 3, 4, 4, 16);
  auto m = init_model<double>(cfg, r);
  TapeT<double> t(false);
  auto st = zero_state(m, t, 2);
  for (int k = 0; k < 2; ++k) {
    auto out = step(m, t.constant(D(nchw(2, 1, 16, 16), 0.5)), st);
    for (int l = 0; l < 3; ++l) EXPECT_EQ(out.state.h[l].shape(), nchw(2, 4, 4, 4));
    EXPECT_EQ(out.state.m.shape(), nchw(2, 4, 4, 4));
    EXPECT_EQ(out.x_hat.shape(), nchw(2, 1, 16, 16));
    st = out.state;
  }
}

// ---------------------------------------------------------------------------
// rollout
// ---------------------------------------------------------------------------

TEST(Rollout, TeacherForcingEqualsStepLoop) {
  Rng r(19);
  for (Variant v : {Variant::convlstm_stack, Variant::mflow, Variant::stlstm, Variant::stlstm_action}) {
    auto cfg = small_config(v);
    auto m = init_model<double>(cfg, r);
    randomize(m, r, 0.5);
    const int T = 3, K = 2;
    auto seq = random_sequence(cfg, 2, T + K, r);
    auto preds = predict(m, seq, T, K, SamplingMask::teacher_forcing(T, K));
    ASSERT_EQ(preds.size(), static_cast<std::size_t>(T + K - 1));
    TapeT<double> t(false);
    auto st = zero_state(m, t, 2);
    for (int k = 1; k <= T + K - 1; ++k) {
      std::optional<VarT<double>> a;
      if (v == Variant::stlstm_action) a = t.constant(seq.actions[k - 1]);
      auto out = step(m, t.constant(seq.frames[k - 1]), st, a);
      EXPECT_EQ(out.x_hat.value(), preds[k - 1]) << to_string(v) << " t=" << k;
      st = out.state;
    }
  }
}

TEST(Rollout, InferenceMaskFeedsPredictionsBack) {
  Rng r(20);
  auto cfg = small_config(Variant::stlstm);
  auto m = init_model<double>(cfg, r);
  randomize(m, r, 0.5);
  const int T = 2, K = 3;
  auto seq = random_sequence(cfg, 1, T + K, r);
  auto preds = predict(m, seq, T, K, SamplingMask::inference(T, K));
  TapeT<double> t(false);
  auto st = zero_state(m, t, 1);
  D last;
  for (int k = 1; k <= T + K - 1; ++k) {
    const D& in = k <= T ? seq.frames[k - 1] : last;
    auto out = step(m, t.constant(in), st);
    last = out.x_hat.value();
    EXPECT_EQ(last, preds[k - 1]);
    st = out.state;
  }
}

TEST(Rollout, PerSampleMasksMixInputs) {
  Rng r(21);
  auto cfg = small_config(Variant::stlstm);
  auto m = init_model<double>(cfg, r);
  randomize(m, r, 0.5);
  const int T = 2, K = 2;
  auto seq = random_sequence(cfg, 2, T + K, r);
  std::vector<SamplingMask> masks{SamplingMask::teacher_forcing(T, K), SamplingMask::inference(T, K)};
  TapeT<double> t(false);
  auto mixed = rollout(m, t, seq, T, K, std::span<const SamplingMask>(masks));
  for (int n = 0; n < 2; ++n) {
    FrameSequenceT<double> one;
    for (const auto& f : seq.frames) {
      D s(nchw(1, 1, 4, 4));
      for (std::size_t i = 0; i < s.size(); ++i) s[i] = f[n * 16 + i];
      one.frames.push_back(s);
    }
    auto ref = predict(m, one, T, K, masks[n]);
    for (int k = 0; k < T + K - 1; ++k) {
      // GEMM blocking depends on the batch width, so agreement is to rounding.
      for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(mixed.predictions[k].value()[n * 16 + i], ref[k][i], 1e-12);
    }
  }
}

TEST(Rollout, DeterministicAndAligned) {
  Rng r(22);
  auto cfg = small_config(Variant::stlstm);
  auto m = init_model<double>(cfg, r);
  randomize(m, r, 0.5);
  const int T = 3, K = 2;
  auto seq = random_sequence(cfg, 1, T + K, r);
  SamplingMask mask(T, K, true);
  mask.set(3, false);
  auto a = predict(m, seq, T, K, mask);
  auto b = predict(m, seq, T, K, mask);
  EXPECT_EQ(a, b);
  // predictions[i] = x_hat_{i+2} only sees frames X_1 .. X_{i+1}.
  auto tf = SamplingMask::teacher_forcing(T, K);
  auto base = predict(m, seq, T, K, tf);
  for (int changed = 1; changed <= T + K - 1; ++changed) {
    auto moved = seq;
    for (auto& v : moved.frames[changed - 1].data()) v = 1.0 - v;
    auto p = predict(m, moved, T, K, tf);
    for (int i = 0; i < T + K - 1; ++i) {
      if (i + 1 < changed) {
        EXPECT_EQ(p[i], base[i]);
      } else {
        EXPECT_NE(p[i], base[i]);
      }
    }
  }
}

TEST(Rollout, Errors) {
  Rng r(23);
  auto cfg = small_config(Variant::stlstm);
  auto m = init_model<double>(cfg, r);
  auto seq = random_sequence(cfg, 2, 4, r);
  EXPECT_THROW(predict(m, seq, 3, 2, SamplingMask::inference(3, 2)), ContractError);
  EXPECT_THROW(predict(m, seq, 2, 2, SamplingMask::inference(3, 2)), ContractError);
  TapeT<double> t(false);
  std::vector<SamplingMask> three(3, SamplingMask::inference(2, 2));
  EXPECT_THROW(rollout(m, t, seq, 2, 2, std::span<const SamplingMask>(three)), ContractError);
}

TEST(SamplingMask, FirstPositionIsAlwaysTrue) {
  SamplingMask m(3, 2, false);
  EXPECT_EQ(m.positions(), 4);
  EXPECT_TRUE(m.at(1));
  EXPECT_FALSE(m.at(2));
  auto inf = SamplingMask::inference(3, 2);
  EXPECT_TRUE(inf.at(3));
  EXPECT_FALSE(inf.at(4));
}

// ---------------------------------------------------------------------------
// Gradient probe
// ---------------------------------------------------------------------------

TEST(GradientProbe, MaxIsOne) {
  Rng r(24);
  auto cfg = small_config(Variant::stlstm);
  auto m = init_model<double>(cfg, r);
  auto seq = random_sequence(cfg, 1, 6, r);
  for (ProbeMode mode : {ProbeMode::last_loss, ProbeMode::accumulated}) {
    auto g = encoder_gradient_probe(m, seq, 3, 3, mode);
    EXPECT_EQ(g.size(), mode == ProbeMode::last_loss ? 5u : 3u);
    EXPECT_EQ(*std::max_element(g.begin(), g.end()), 1.0);
    for (double v : g) EXPECT_GE(v, 0.0);
  }
  for (auto* p : m.parameters()) EXPECT_EQ(p->grad.max_abs(), 0.0);
  EXPECT_THROW(encoder_gradient_probe(m, seq, 1, 0, ProbeMode::last_loss), ContractError);
}

// With f and f' saturated to zero and the hidden-to-hidden and memory
// convolutions removed, nothing but the current step reaches the last loss.
TEST(GradientProbe, SaturatedForgetGatesBlockGradients) {
  Rng r(25);
  auto cfg = small_config(Variant::stlstm, 1);
  auto m = init_model<double>(cfg, r);
  randomize(m, r, 0.5);
  auto& cell = m.stlstm[0];
  cell.w_h.value.fill(0.0);
  cell.w_m.value.fill(0.0);
  const int C = cfg.channels;
  for (int c = 0; c < C; ++c) {
    cell.b.value[2 * C + c] = -40.0;
    cell.b.value[5 * C + c] = -40.0;
  }
  const int T = 3, K = 2;
  auto seq = random_sequence(cfg, 1, T + K, r);
  auto unroll = [&](TapeT<double>& tape) {
    auto ro = rollout(m, tape, seq, T, K, SamplingMask::teacher_forcing(T, K));
    return ProbeTraceT<double>{ro.bottom_hidden, ro.predictions};
  };
  auto g = gradient_probe<double>(unroll, seq.frames, T, K, ProbeMode::last_loss);
  ASSERT_EQ(g.size(), 4u);
  EXPECT_EQ(g.back(), 1.0);
  for (int t = 0; t < 3; ++t) EXPECT_LT(g[t], 1e-12);
}

// Scalar surrogate h_t = a*h_{t-1} + x_t, x_hat_{t+1} = w*h_t. The chain rule
// gives dL_{T+K}/dh_t proportional to a^(T+K-1-t).
TEST(GradientProbe, LinearSurrogateMatchesChainRule) {
  const double a = 0.8, w = 1.5;
  const int T = 3, K = 3;
  std::vector<D> frames;
  for (int t = 1; t <= T + K; ++t) frames.emplace_back(Shape{1}, 0.1 * t);
  auto unroll = [&](TapeT<double>& tape) {
    ProbeTraceT<double> tr;
    VarT<double> h = tape.leaf(D(Shape{1}));
    for (int t = 1; t <= T + K - 1; ++t) {
      h = add(scale(h, a), tape.constant(frames[t - 1]));
      tr.hidden.push_back(h);
      tr.predictions.push_back(scale(h, w));
    }
    return tr;
  };
  auto g = gradient_probe<double>(unroll, frames, T, K, ProbeMode::last_loss);
  for (int t = 1; t <= T + K - 1; ++t) EXPECT_NEAR(g[t - 1], std::pow(a, T + K - 1 - t), 1e-12);

  // Accumulated: (1/(T-1)) sum_{tau=2..T} |dL_t/dh_tau|, with
  // dL_t/dh_tau = 2 (w h_{t-1} - x_t) w a^(t-1-tau).
  auto acc = gradient_probe<double>(unroll, frames, T, K, ProbeMode::accumulated);
  std::vector<double> h(T + K, 0.0);
  for (int t = 1; t <= T + K - 1; ++t) h[t] = a * h[t - 1] + 0.1 * t;
  std::vector<double> ref;
  for (int t = T + 1; t <= T + K; ++t) {
    double s = 0.0;
    for (int tau = 2; tau <= T; ++tau) s += std::abs(2.0 * (w * h[t - 1] - 0.1 * t) * w * std::pow(a, t - 1 - tau));
    ref.push_back(s / (T - 1));
  }
  const double mx = *std::max_element(ref.begin(), ref.end());
  ASSERT_EQ(acc.size(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(acc[i], ref[i] / mx, 1e-12);
}

}  // namespace
}  // namespace stpred
