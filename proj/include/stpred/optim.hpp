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

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "stpred/autodiff.hpp"
#include "stpred/errors.hpp"

namespace stpred {

// Adam with bias-corrected moments. Moment buffers are created lazily on the
// first step and are positionally matched to the parameter list.
template <typename S>
struct AdamStateT {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<TensorT<S>> m;
  std::vector<TensorT<S>> v;
};

using AdamState = AdamStateT<float>;

template <typename S>
void adam_step(std::span<ParameterT<S>* const> params, AdamStateT<S>& st) {
  for (const ParameterT<S>* p : params) {
    if (!(p->grad.shape() == p->value.shape())) throw ContractError("adam_step: parameter '" + p->name + "' has no gradient");
  }
  if (st.m.empty() && st.v.empty()) {
    for (const ParameterT<S>* p : params) {
      st.m.emplace_back(p->value.shape());
      st.v.emplace_back(p->value.shape());
    }
  }
  if (st.m.size() != params.size() || st.v.size() != params.size()) {
    throw ContractError("adam_step: optimizer state tracks " + std::to_string(st.m.size()) + " parameters, got " +
                        std::to_string(params.size()));
  }
  st.step += 1;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  const S b1 = static_cast<S>(st.beta1);
  const S b2 = static_cast<S>(st.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    ParameterT<S>& p = *params[k];
    TensorT<S>& m = st.m[k];
    TensorT<S>& v = st.v[k];
    if (!(m.shape() == p.value.shape()) || !(v.shape() == p.value.shape())) {
      throw ContractError("adam_step: moment shape mismatch for '" + p.name + "'");
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const S g = p.grad[i];
      m[i] = b1 * m[i] + (S(1) - b1) * g;
      v[i] = b2 * v[i] + (S(1) - b2) * g * g;
      const double mhat = static_cast<double>(m[i]) / c1;
      const double vhat = static_cast<double>(v[i]) / c2;
      p.value[i] -= static_cast<S>(st.lr * mhat / (std::sqrt(vhat) + st.eps));
    }
  }
}

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename S>
double clip_grad_norm(std::span<ParameterT<S>* const> params, double max_norm) {
  double sq = 0.0;
  for (const ParameterT<S>* p : params) {
    for (S g : p->grad.data()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const S f = static_cast<S>(max_norm / norm);
    for (ParameterT<S>* p : params) p->grad *= f;
  }
  return norm;
}

template <typename S>
void zero_grads(std::span<ParameterT<S>* const> params) {
  for (ParameterT<S>* p : params) p->zero_grad();
}

}  // namespace stpred
