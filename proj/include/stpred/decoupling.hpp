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

// Memory-decoupling regulariser for ST-LSTM stacks.
//
// Both memory increments (i⊙g for C, i'⊙g' for M) go through one shared 1x1
// projection W_decouple; the penalty is the absolute cosine similarity of the
// two projected maps, computed per sample and channel over the flattened
// spatial plane, and summed. W_decouple only feeds this loss and is dropped
// for inference.

#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "stpred/autodiff.hpp"
#include "stpred/cells.hpp"
#include "stpred/errors.hpp"
#include "stpred/network.hpp"
#include "stpred/ops.hpp"

namespace stpred {

inline constexpr double kDecoupleEps = 1e-8;

template <typename S>
std::pair<VarT<S>, VarT<S>> project_increments(const GateCacheT<S>& cache, const VarT<S>& w_decouple) {
  if (!cache.has_spatiotemporal()) throw ContractError("project_increments: cache has no spatiotemporal increment");
  const Shape& ws = w_decouple.shape();
  const Shape& is = cache.temporal_inc.shape();
  if (ws.rank() != 4 || ws[2] != 1 || ws[3] != 1 || ws[0] != is.c() || ws[1] != is.c()) {
    throw ShapeError("project_increments: W_decouple " + ws.str() + " does not map " + std::to_string(is.c()) +
                     " channels to themselves");
  }
  return {conv2d(cache.temporal_inc, w_decouple), conv2d(cache.spatiotemporal_inc, w_decouple)};
}

// Σ_{n,c} |<a,b>| / (||a|| ||b|| + eps) over the spatial plane of each (n, c).
template <typename S>
VarT<S> decouple_loss(const VarT<S>& dc, const VarT<S>& dm, double eps = kDecoupleEps) {
  require_same(dc.shape(), dm.shape(), "decouple_loss");
  require_rank4(dc.shape(), "decouple_loss");
  if (!(eps > 0.0)) throw ContractError("decouple_loss: eps must be positive");
  const Shape s = dc.shape();
  const std::size_t planes = static_cast<std::size_t>(s.n()) * s.c();
  const std::size_t plane = s.plane();

  struct Stats {
    double dot, na, nb;
  };
  std::vector<Stats> stats(planes);
  double total = 0.0;
  for (std::size_t k = 0; k < planes; ++k) {
    const S* a = dc.value().ptr() + k * plane;
    const S* b = dm.value().ptr() + k * plane;
    double dot = 0, aa = 0, bb = 0;
    for (std::size_t p = 0; p < plane; ++p) {
      dot += static_cast<double>(a[p]) * b[p];
      aa += static_cast<double>(a[p]) * a[p];
      bb += static_cast<double>(b[p]) * b[p];
    }
    stats[k] = {dot, std::sqrt(aa), std::sqrt(bb)};
    total += std::abs(dot) / (stats[k].na * stats[k].nb + eps);
  }
  TensorT<S> out(Shape{1}, static_cast<S>(total));
  return dc.tape().record(std::move(out), {dc, dm},
                          [dc, dm, stats = std::move(stats), plane, eps](TapeT<S>& t, const TensorT<S>& grad) {
                            TensorT<S>* ga = t.grad_buffer(dc);
                            TensorT<S>* gb = t.grad_buffer(dm);
                            const double g = static_cast<double>(grad[0]);
                            for (std::size_t k = 0; k < stats.size(); ++k) {
                              const Stats& st = stats[k];
                              const double sign = st.dot > 0 ? 1.0 : (st.dot < 0 ? -1.0 : 0.0);
                              if (sign == 0.0) continue;
                              const double den = st.na * st.nb + eps;
                              const S* a = dc.value().ptr() + k * plane;
                              const S* b = dm.value().ptr() + k * plane;
                              // d/da of |a.b| / (|a||b| + eps)
                              const double ca = st.na > 0 ? st.dot * st.nb / (st.na * den * den) : 0.0;
                              const double cb = st.nb > 0 ? st.dot * st.na / (st.nb * den * den) : 0.0;
                              for (std::size_t p = 0; p < plane; ++p) {
                                if (ga) (*ga)[k * plane + p] += static_cast<S>(g * sign * (b[p] / den - ca * a[p]));
                                if (gb) (*gb)[k * plane + p] += static_cast<S>(g * sign * (a[p] / den - cb * b[p]));
                              }
                            }
                          });
}

// Decoupling loss summed over every (step, layer) cache of a rollout.
template <typename S>
VarT<S> sequence_decouple_loss(ModelT<S>& model, TapeT<S>& tape,
                               const std::vector<std::vector<GateCacheT<S>>>& caches) {
  if (!model.w_decouple) throw ContractError("decoupling loss needs W_decouple; the model was stripped");
  const VarT<S> w = tape.param(*model.w_decouple);
  std::vector<VarT<S>> terms;
  for (const auto& per_step : caches) {
    for (const auto& cache : per_step) {
      auto [dc, dm] = project_increments(cache, w);
      terms.push_back(decouple_loss(dc, dm));
    }
  }
  if (terms.empty()) throw ContractError("decoupling loss over an empty rollout");
  return add_n<S>(terms);
}

// Mean over caches, samples and channels of |cos| between the raw (unprojected)
// increments i⊙g and i'⊙g'.
template <typename S>
double mean_abs_cosine(std::span<const GateCacheT<S>> caches) {
  double acc = 0.0;
  std::size_t count = 0;
  for (const auto& cache : caches) {
    if (!cache.has_spatiotemporal()) throw ContractError("mean_abs_cosine: cache has no spatiotemporal increment");
    const TensorT<S>& a = cache.temporal_inc.value();
    const TensorT<S>& b = cache.spatiotemporal_inc.value();
    const std::size_t plane = a.shape().plane();
    const std::size_t planes = a.size() / plane;
    for (std::size_t k = 0; k < planes; ++k) {
      double dot = 0, aa = 0, bb = 0;
      for (std::size_t p = 0; p < plane; ++p) {
        const double x = a[k * plane + p], y = b[k * plane + p];
        dot += x * y;
        aa += x * x;
        bb += y * y;
      }
      acc += std::abs(dot) / (std::sqrt(aa) * std::sqrt(bb) + kDecoupleEps);
      ++count;
    }
  }
  if (count == 0) throw ContractError("mean_abs_cosine: empty sample");
  return acc / static_cast<double>(count);
}

// Diagnostic on a batch of sequences, unrolled with real frames through T.
template <typename S>
double mean_abs_cosine(ModelT<S>& model, const FrameSequenceT<S>& sample, int T, int K) {
  if (!has_dual_memory(model.config.variant)) throw ContractError("mean_abs_cosine needs an ST-LSTM model");
  if (sample.length() == 0 || sample.batch() == 0) throw ContractError("mean_abs_cosine: empty sample");
  TapeT<S> tape(false);
  RolloutT<S> r = rollout(model, tape, sample, T, K, SamplingMask::inference(T, K));
  std::vector<GateCacheT<S>> flat;
  for (auto& per_step : r.caches)
    for (auto& c : per_step) flat.push_back(c);
  return mean_abs_cosine<S>(std::span<const GateCacheT<S>>(flat));
}

// Copy of the model without the training-only projection.
template <typename S>
ModelT<S> strip_training_params(const ModelT<S>& model) {
  ModelT<S> out = model;
  out.w_decouple.reset();
  return out;
}

}  // namespace stpred
