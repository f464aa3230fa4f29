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

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "stpred/autodiff.hpp"
#include "stpred/errors.hpp"

namespace stpred {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Compares tape gradients against central differences for every element of
// every parameter. f(tape) must build a scalar loss from tape.param(...) of
// the given parameters and be deterministic.
//
// rel = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
//
// Instantiate with double to check backward rules; float32 central
// differences are dominated by rounding for small gradients.
template <typename S, typename F>
GradCheckResult grad_check(F&& f, std::span<ParameterT<S>* const> params, double h) {
  if (!(h > 0.0)) throw ContractError("grad_check: step must be positive");

  for (ParameterT<S>* p : params) p->zero_grad();
  {
    TapeT<S> tape(true);
    VarT<S> loss = f(tape);
    if (!std::isfinite(static_cast<double>(loss.value()[0]))) throw NumericError("grad_check: loss is not finite");
    tape.backward(loss);
  }
  std::vector<TensorT<S>> analytic;
  analytic.reserve(params.size());
  for (ParameterT<S>* p : params) analytic.push_back(p->grad);

  auto eval = [&]() {
    TapeT<S> tape(false);
    const double v = static_cast<double>(f(tape).value()[0]);
    if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite under perturbation");
    return v;
  };

  GradCheckResult res;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ParameterT<S>& p = *params[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const S orig = p.value[i];
      p.value[i] = static_cast<S>(orig + h);
      const double up = eval();
      p.value[i] = static_cast<S>(orig - h);
      const double down = eval();
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = static_cast<double>(analytic[k][i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++res.checked;
      if (rel > res.max_rel_error || res.checked == 1) {
        res.max_rel_error = rel;
        res.worst_param = p.name;
        res.worst_index = i;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

template <typename S, typename F>
GradCheckResult grad_check(F&& f, std::vector<ParameterT<S>*> params, double h) {
  return grad_check<S>(std::forward<F>(f), std::span<ParameterT<S>* const>(params), h);
}

}  // namespace stpred
