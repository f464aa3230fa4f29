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

// Stacked recurrent predictors and their unrolling.
//
// Frames are patchified (space-to-depth) before entering the bottom layer,
// and the top layer's hidden state is mapped back to a frame by a 1x1 head
// followed by unpatchify. Layers share N, hidden channels and the patched
// resolution. Timesteps t are 1-based: step t consumes an input frame for
// position t and emits the prediction of X_{t+1}.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "stpred/autodiff.hpp"
#include "stpred/cells.hpp"
#include "stpred/errors.hpp"
#include "stpred/ops.hpp"
#include "stpred/rng.hpp"
#include "stpred/tensor.hpp"

namespace stpred {

enum class Variant { convlstm_stack, mflow, stlstm, stlstm_action };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::convlstm_stack: return "convlstm";
    case Variant::mflow: return "mflow";
    case Variant::stlstm: return "stlstm";
    case Variant::stlstm_action: return "stlstm_action";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "convlstm" || s == "convlstm_stack") return Variant::convlstm_stack;
  if (s == "mflow") return Variant::mflow;
  if (s == "stlstm") return Variant::stlstm;
  if (s == "stlstm_action") return Variant::stlstm_action;
  throw ConfigError("unknown variant '" + s + "'");
}

inline bool has_dual_memory(Variant v) { return v == Variant::stlstm || v == Variant::stlstm_action; }

struct NetworkConfig {
  Variant variant = Variant::stlstm;
  int layers = 4;
  int channels = 128;
  int kernel = 5;
  int patch = 4;
  int in_channels = 1;  // J
  int height = 64;
  int width = 64;
  int action_dim = 0;  // stlstm_action only

  int patched_channels() const { return in_channels * patch * patch; }
  int state_height() const { return height / patch; }
  int state_width() const { return width / patch; }

  void validate() const {
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel must be a positive odd integer");
    if (patch < 1) throw ConfigError("patch must be >= 1");
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    if (height < 1 || width < 1 || height % patch != 0 || width % patch != 0) {
      throw ConfigError("frame size " + std::to_string(height) + "x" + std::to_string(width) +
                        " is not divisible by patch " + std::to_string(patch));
    }
    if (variant == Variant::stlstm_action && action_dim < 1) throw ConfigError("stlstm_action needs action_dim >= 1");
    if (variant != Variant::stlstm_action && action_dim != 0) {
      throw ConfigError("action_dim is only valid for the stlstm_action variant");
    }
  }
};

// A batch of sequences: frames[t-1] is X_t with shape [N, J, H, W];
// actions[t-1], when present, is the action applied between X_t and X_{t+1}
// with shape [N, d_a, 1, 1].
template <typename S>
struct FrameSequenceT {
  std::vector<TensorT<S>> frames;
  std::vector<TensorT<S>> actions;

  int length() const { return static_cast<int>(frames.size()); }
  int batch() const { return frames.empty() ? 0 : frames.front().shape().n(); }
  bool has_actions() const { return !actions.empty(); }
};

using FrameSequence = FrameSequenceT<float>;

// ---------------------------------------------------------------------------
// Space-to-depth
// ---------------------------------------------------------------------------

namespace detail {

// Source index (in the [N,J,H,W] frame) of every element of the patched
// tensor [N, J*p*p, H/p, W/p]. Channel j*p*p + dy*p + dx at (y, x) reads
// frame pixel (y*p + dy, x*p + dx) of channel j.
inline std::vector<std::size_t> patch_index(const Shape& frame, int p) {
  const int n = frame.n(), j = frame.c(), h = frame.h(), w = frame.w();
  const int hp = h / p, wp = w / p;
  std::vector<std::size_t> idx(frame.numel());
  std::size_t o = 0;
  for (int b = 0; b < n; ++b)
    for (int c = 0; c < j; ++c)
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          for (int y = 0; y < hp; ++y)
            for (int x = 0; x < wp; ++x)
              idx[o++] = ((static_cast<std::size_t>(b) * j + c) * h + (y * p + dy)) * w + (x * p + dx);
  return idx;
}

// out[i] = in[gather[i]] when forward, out[gather[i]] = in[i] otherwise.
template <typename S>
VarT<S> permute(const VarT<S>& x, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> gather,
                bool forward) {
  TensorT<S> out(out_shape);
  const TensorT<S>& in = x.value();
  const auto& g = *gather;
  if (forward) {
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = in[g[i]];
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) out[g[i]] = in[i];
  }
  return x.tape().record(std::move(out), {x}, [x, gather, forward](TapeT<S>& t, const TensorT<S>& grad) {
    TensorT<S>* dx = t.grad_buffer(x);
    const auto& g = *gather;
    if (forward) {
      for (std::size_t i = 0; i < g.size(); ++i) (*dx)[g[i]] += grad[i];
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += grad[g[i]];
    }
  });
}

inline void check_patchable(const Shape& s, int p) {
  require_rank4(s, "patchify");
  if (p < 1 || s.h() % p != 0 || s.w() % p != 0) {
    throw ShapeError("patchify: frame " + s.str() + " is not divisible by patch " + std::to_string(p));
  }
}

}  // namespace detail

// [N,J,H,W] -> [N,J*p*p,H/p,W/p].
template <typename S>
VarT<S> patchify(const VarT<S>& frame, int p) {
  const Shape& s = frame.shape();
  detail::check_patchable(s, p);
  if (p == 1) return frame;
  auto idx = std::make_shared<const std::vector<std::size_t>>(detail::patch_index(s, p));
  return detail::permute(frame, nchw(s.n(), s.c() * p * p, s.h() / p, s.w() / p), idx, true);
}

// Inverse of patchify for a frame of `channels` channels.
template <typename S>
VarT<S> unpatchify(const VarT<S>& patched, int p, int channels) {
  const Shape& s = patched.shape();
  require_rank4(s, "unpatchify");
  if (p < 1 || s.c() != channels * p * p) {
    throw ShapeError("unpatchify: " + s.str() + " does not hold " + std::to_string(channels) + " channels at patch " +
                     std::to_string(p));
  }
  if (p == 1) return patched;
  const Shape frame = nchw(s.n(), channels, s.h() * p, s.w() * p);
  auto idx = std::make_shared<const std::vector<std::size_t>>(detail::patch_index(frame, p));
  return detail::permute(patched, frame, idx, false);
}

template <typename S>
TensorT<S> patchify(const TensorT<S>& frame, int p) {
  TapeT<S> tape(false);
  return patchify(tape.constant(frame), p).value();
}

template <typename S>
TensorT<S> unpatchify(const TensorT<S>& patched, int p, int channels) {
  TapeT<S> tape(false);
  return unpatchify(tape.constant(patched), p, channels).value();
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename S>
struct ModelT {
  NetworkConfig config;
  std::vector<ConvLstmParamsT<S>> convlstm;
  std::vector<MFlowParamsT<S>> mflow;
  std::vector<StLstmParamsT<S>> stlstm;
  std::vector<ActionFuseParamsT<S>> action;
  ParameterT<S> head;                       // [J*p*p, C, 1, 1], no bias
  std::optional<ParameterT<S>> w_decouple;  // [C, C, 1, 1], training only

  // Stable order; checkpoint records follow it.
  std::vector<ParameterT<S>*> parameters() { return collect<ParameterT<S>>(*this); }
  std::vector<const ParameterT<S>*> parameters() const { return collect<const ParameterT<S>>(*this); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const ParameterT<S>* p : parameters()) n += p->numel();
    return n;
  }

  void zero_grad() {
    for (ParameterT<S>* p : parameters()) p->zero_grad();
  }

  template <typename U>
  ModelT<U> cast() const;

 private:
  template <typename P, typename Self>
  static std::vector<P*> collect(Self& self) {
    std::vector<P*> out;
    auto append = [&out](auto& cells) {
      for (auto& cell : cells) {
        // cell.parameters() is non-const; the const view only reads through it.
        for (auto* p : const_cast<std::remove_const_t<std::remove_reference_t<decltype(cell)>>&>(cell).parameters())
          out.push_back(p);
      }
    };
    append(self.convlstm);
    append(self.mflow);
    append(self.stlstm);
    append(self.action);
    out.push_back(&self.head);
    if (self.w_decouple) out.push_back(&*self.w_decouple);
    return out;
  }
};

// Allocates all parameters; deterministic given the rng state.
template <typename S>
ModelT<S> init_model(const NetworkConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelT<S> m;
  m.config = cfg;
  const int C = cfg.channels;
  const int k = cfg.kernel;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string prefix = "l" + std::to_string(l) + ".";
    const int cin = l == 0 ? cfg.patched_channels() : C;
    switch (cfg.variant) {
      case Variant::convlstm_stack:
        m.convlstm.push_back(ConvLstmParamsT<S>::init(prefix + "convlstm.", cin, C, k, cfg.state_height(),
                                                      cfg.state_width(), rng));
        break;
      case Variant::mflow:
        m.mflow.push_back(MFlowParamsT<S>::init(prefix + "mflow.", l == 0, cin, C, k, rng));
        break;
      case Variant::stlstm_action:
        m.action.push_back(ActionFuseParamsT<S>::init(prefix + "action.", cfg.action_dim, C, k, rng));
        [[fallthrough]];
      case Variant::stlstm:
        m.stlstm.push_back(StLstmParamsT<S>::init(prefix + "stlstm.", cin, C, k, rng));
        break;
    }
  }
  m.head = detail::conv_weight<S>("head", cfg.patched_channels(), C, 1, rng);
  if (has_dual_memory(cfg.variant)) m.w_decouple = detail::conv_weight<S>("w_decouple", C, C, 1, rng);
  return m;
}

template <typename S>
template <typename U>
ModelT<U> ModelT<S>::cast() const {
  // Re-initialise the layout with any seed, then copy values over.
  Rng rng(0);
  ModelT<U> out = init_model<U>(config, rng);
  if (!w_decouple) out.w_decouple.reset();
  auto src = parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i]->value = src[i]->value.template cast<U>();
    dst[i]->grad = TensorT<U>(dst[i]->value.shape());
  }
  return out;
}

using Model = ModelT<float>;

// Per-layer H and C plus the zigzag memory M. Unused parts stay invalid:
// the convlstm stack has no M and the memory-flow stack has no C.
template <typename S>
struct NetworkStateT {
  std::vector<VarT<S>> h;
  std::vector<VarT<S>> c;
  VarT<S> m;
};

template <typename S>
NetworkStateT<S> zero_state(const ModelT<S>& model, TapeT<S>& tape, int batch) {
  const NetworkConfig& cfg = model.config;
  const Shape s = nchw(batch, cfg.channels, cfg.state_height(), cfg.state_width());
  NetworkStateT<S> st;
  for (int l = 0; l < cfg.layers; ++l) {
    st.h.push_back(tape.constant(TensorT<S>(s)));
    if (cfg.variant != Variant::mflow) st.c.push_back(tape.constant(TensorT<S>(s)));
  }
  if (cfg.variant != Variant::convlstm_stack) st.m = tape.constant(TensorT<S>(s));
  return st;
}

template <typename S>
struct StepOutT {
  NetworkStateT<S> state;
  VarT<S> x_hat;  // unclamped prediction of the next frame
  std::vector<GateCacheT<S>> caches;
};

// One timestep of the whole stack.
template <typename S>
StepOutT<S> step(ModelT<S>& model, const VarT<S>& frame, const NetworkStateT<S>& prev,
                 const std::optional<VarT<S>>& action = std::nullopt) {
  const NetworkConfig& cfg = model.config;
  if (action && cfg.variant != Variant::stlstm_action) {
    throw ContractError("step: action supplied to the " + to_string(cfg.variant) + " variant");
  }
  if (!action && cfg.variant == Variant::stlstm_action) throw ContractError("step: stlstm_action requires an action");
  const Shape& fs = frame.shape();
  require_rank4(fs, "step");
  if (fs.c() != cfg.in_channels || fs.h() != cfg.height || fs.w() != cfg.width) {
    throw ShapeError("step: frame " + fs.str() + " does not match the configured " + std::to_string(cfg.in_channels) +
                     "x" + std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  }
  auto& tape = frame.tape();
  const VarT<S> x = patchify(frame, cfg.patch);
  StepOutT<S> out;
  out.state = prev;
  NetworkStateT<S>& st = out.state;

  switch (cfg.variant) {
    case Variant::convlstm_stack: {
      VarT<S> below = x;
      for (int l = 0; l < cfg.layers; ++l) {
        auto r = convlstm_step(below, prev.h[l], prev.c[l], model.convlstm[l]);
        st.h[l] = r.h;
        st.c[l] = r.c;
        r.cache.layer = l;
        out.caches.push_back(r.cache);
        below = r.h;
      }
      break;
    }
    case Variant::mflow: {
      VarT<S> h_below = prev.h[cfg.layers - 1];
      VarT<S> m_below = prev.m;
      for (int l = 0; l < cfg.layers; ++l) {
        std::optional<VarT<S>> xin;
        if (l == 0) xin = x;
        auto r = mflow_step(xin, h_below, m_below, l + 1, model.mflow[l]);
        st.h[l] = r.h;
        r.cache.layer = l;
        out.caches.push_back(r.cache);
        h_below = r.h;
        m_below = r.m;
      }
      st.m = m_below;
      break;
    }
    case Variant::stlstm:
    case Variant::stlstm_action: {
      VarT<S> below = x;
      VarT<S> m_below = prev.m;
      for (int l = 0; l < cfg.layers; ++l) {
        VarT<S> h_in = prev.h[l];
        if (action) h_in = action_fuse(prev.h[l], *action, model.action[l]);
        auto r = stlstm_step(below, h_in, prev.c[l], m_below, model.stlstm[l]);
        st.h[l] = r.h;
        st.c[l] = r.c;
        r.cache.layer = l;
        out.caches.push_back(r.cache);
        below = r.h;
        m_below = r.m;
      }
      st.m = m_below;
      break;
    }
  }
  const VarT<S> top = st.h[cfg.layers - 1];
  out.x_hat = unpatchify(conv2d(top, tape.param(model.head)), cfg.patch, cfg.in_channels);
  return out;
}

// ---------------------------------------------------------------------------
// Rollout
// ---------------------------------------------------------------------------

// Input choice per position t = 1 .. T+K-1 for one sequence; true feeds the
// real frame X_t, false feeds the model's own prediction of X_t. Position 1
// is always true.
struct SamplingMask {
  int T = 0;
  int K = 0;
  std::vector<std::uint8_t> take_true;  // index t-1

  SamplingMask() = default;
  SamplingMask(int t, int k, bool fill) : T(t), K(k), take_true(static_cast<std::size_t>(t + k - 1), fill) {
    if (!take_true.empty()) take_true[0] = 1;
  }

  int positions() const { return static_cast<int>(take_true.size()); }
  bool at(int t) const { return take_true.at(static_cast<std::size_t>(t - 1)) != 0; }
  void set(int t, bool v) { take_true.at(static_cast<std::size_t>(t - 1)) = v ? 1 : 0; }

  // Real frames through T, own predictions afterwards.
  static SamplingMask inference(int t, int k) {
    SamplingMask m(t, k, false);
    for (int i = 1; i <= t && i <= m.positions(); ++i) m.set(i, true);
    return m;
  }
  static SamplingMask teacher_forcing(int t, int k) { return SamplingMask(t, k, true); }

  bool operator==(const SamplingMask&) const = default;
};

template <typename S>
struct RolloutT {
  std::vector<VarT<S>> predictions;         // predictions[t-1] is x_hat_{t+1}, t = 1 .. T+K-1
  std::vector<VarT<S>> bottom_hidden;       // bottom_hidden[t-1] is H_t^1
  std::vector<std::vector<GateCacheT<S>>> caches;  // caches[t-1] holds one entry per layer
  NetworkStateT<S> final_state;
};

namespace detail {

template <typename S>
VarT<S> action_input(TapeT<S>& tape, const FrameSequenceT<S>& seq, int t, Variant v) {
  if (v != Variant::stlstm_action) return VarT<S>();
  if (seq.actions.size() < static_cast<std::size_t>(t)) {
    throw ContractError("rollout: action-conditioned model needs an action for step " + std::to_string(t));
  }
  return tape.constant(seq.actions[t - 1]);
}

}  // namespace detail

// Unrolls t = 1 .. T+K-1. masks holds one mask per sample, or a single mask
// shared by the whole batch.
template <typename S>
RolloutT<S> rollout(ModelT<S>& model, TapeT<S>& tape, const FrameSequenceT<S>& seq, int T, int K,
                    std::span<const SamplingMask> masks) {
  if (T < 1 || K < 0 || T + K < 2) throw ContractError("rollout: need T >= 1 and T + K >= 2");
  if (seq.length() < T + K) {
    throw ContractError("rollout: sequence has " + std::to_string(seq.length()) + " frames, need " +
                        std::to_string(T + K));
  }
  const int batch = seq.batch();
  if (masks.size() != 1 && masks.size() != static_cast<std::size_t>(batch)) {
    throw ContractError("rollout: expected 1 or " + std::to_string(batch) + " masks, got " +
                        std::to_string(masks.size()));
  }
  for (const SamplingMask& m : masks) {
    if (m.positions() != T + K - 1) {
      throw ContractError("rollout: mask covers " + std::to_string(m.positions()) + " positions, need " +
                          std::to_string(T + K - 1));
    }
  }
  auto mask_at = [&](int n, int t) { return masks.size() == 1 ? masks[0].at(t) : masks[n].at(t); };

  RolloutT<S> out;
  NetworkStateT<S> state = zero_state(model, tape, batch);
  VarT<S> last_pred;
  for (int t = 1; t <= T + K - 1; ++t) {
    const VarT<S> truth = tape.constant(seq.frames[t - 1]);
    VarT<S> input = truth;
    if (t > 1) {
      std::vector<bool> take(static_cast<std::size_t>(batch));
      bool all_true = true, all_false = true;
      for (int n = 0; n < batch; ++n) {
        take[n] = mask_at(n, t);
        all_true = all_true && take[n];
        all_false = all_false && !take[n];
      }
      if (all_false) {
        input = last_pred;
      } else if (!all_true) {
        input = select_batch(take, truth, last_pred);
      }
    }
    std::optional<VarT<S>> action;
    if (model.config.variant == Variant::stlstm_action) {
      action = detail::action_input(tape, seq, t, model.config.variant);
    }
    StepOutT<S> r = step(model, input, state, action);
    state = r.state;
    last_pred = r.x_hat;
    out.predictions.push_back(r.x_hat);
    out.bottom_hidden.push_back(state.h[0]);
    for (auto& c : r.caches) c.step = t;
    out.caches.push_back(std::move(r.caches));
  }
  out.final_state = state;
  return out;
}

template <typename S>
RolloutT<S> rollout(ModelT<S>& model, TapeT<S>& tape, const FrameSequenceT<S>& seq, int T, int K,
                    const SamplingMask& mask) {
  return rollout(model, tape, seq, T, K, std::span<const SamplingMask>(&mask, 1));
}

// Forward-only rollout returning plain tensors.
template <typename S>
std::vector<TensorT<S>> predict(ModelT<S>& model, const FrameSequenceT<S>& seq, int T, int K,
                                const SamplingMask& mask) {
  TapeT<S> tape(false);
  RolloutT<S> r = rollout(model, tape, seq, T, K, mask);
  std::vector<TensorT<S>> out;
  out.reserve(r.predictions.size());
  for (const auto& p : r.predictions) out.push_back(p.value());
  return out;
}

// ---------------------------------------------------------------------------
// Gradient probe
// ---------------------------------------------------------------------------

enum class ProbeMode {
  last_loss,    // ||dL_{T+K} / dH_t^1|| for t = 1 .. T+K-1
  accumulated,  // (1/(T-1)) Σ_{τ=2..T} ||dL_t / dH_τ^1|| for t = T+1 .. T+K
};

template <typename S>
struct ProbeTraceT {
  std::vector<VarT<S>> hidden;       // hidden[t-1] = H_t^1
  std::vector<VarT<S>> predictions;  // predictions[t-1] = x_hat_{t+1}
};

namespace detail {

template <typename S>
double l2(const TensorT<S>& g) {
  double acc = 0.0;
  for (S v : g.data()) acc += static_cast<double>(v) * v;
  return std::sqrt(acc);
}

inline void normalize_by_max(std::vector<double>& v) {
  const double mx = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
  if (mx > 0.0)
    for (double& x : v) x /= mx;
}

}  // namespace detail

// Gradient norms of per-frame losses w.r.t. the bottom-layer hidden states,
// normalised so the largest entry is 1. unroll(tape) records the forward pass
// and returns the hidden/prediction handles; frames[t-1] is the target X_t.
template <typename S, typename Unroll>
std::vector<double> gradient_probe(Unroll&& unroll, const std::vector<TensorT<S>>& frames, int T, int K,
                                   ProbeMode mode) {
  if (T + K < 2) throw ContractError("gradient_probe: need T + K >= 2");
  if (frames.size() < static_cast<std::size_t>(T + K)) throw ContractError("gradient_probe: sequence too short");
  TapeT<S> tape(true);
  ProbeTraceT<S> trace = unroll(tape);
  const int steps = T + K - 1;
  if (trace.hidden.size() != static_cast<std::size_t>(steps) || trace.predictions.size() != trace.hidden.size()) {
    throw ContractError("gradient_probe: unroll must return one hidden state and prediction per step");
  }
  auto frame_loss = [&](int t) {  // loss on x_hat_t, t >= 2
    return mse_sum(trace.predictions[t - 2], tape.constant(frames[t - 1]));
  };

  std::vector<double> out;
  if (mode == ProbeMode::last_loss) {
    tape.backward(frame_loss(T + K));
    for (int t = 1; t <= steps; ++t) out.push_back(detail::l2(tape.grad(trace.hidden[t - 1])));
  } else {
    if (T < 2) throw ContractError("gradient_probe: accumulated mode needs T >= 2");
    if (K < 1) throw ContractError("gradient_probe: accumulated mode needs K >= 1");
    for (int t = T + 1; t <= T + K; ++t) {
      tape.backward(frame_loss(t));
      double acc = 0.0;
      for (int tau = 2; tau <= T; ++tau) acc += detail::l2(tape.grad(trace.hidden[tau - 1]));
      out.push_back(acc / (T - 1));
    }
  }
  detail::normalize_by_max(out);
  return out;
}

// Probe of a model under the inference scheme (real frames through T).
// Parameter gradients touched by the probe are cleared before returning.
template <typename S>
std::vector<double> encoder_gradient_probe(ModelT<S>& model, const FrameSequenceT<S>& seq, int T, int K,
                                           ProbeMode mode) {
  if (T + K < 2) throw ContractError("encoder_gradient_probe: need T + K >= 2");
  const SamplingMask mask = SamplingMask::inference(T, K);
  auto unroll = [&](TapeT<S>& tape) {
    RolloutT<S> r = rollout(model, tape, seq, T, K, mask);
    return ProbeTraceT<S>{r.bottom_hidden, r.predictions};
  };
  auto out = gradient_probe<S>(unroll, seq.frames, T, K, mode);
  model.zero_grad();
  return out;
}

}  // namespace stpred
