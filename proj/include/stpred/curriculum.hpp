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

// Sampling curricula over the input of each unrolled step.
//
// Reverse scheduled sampling raises ε_k, the probability of feeding a real
// context frame at encode positions 2..T. Classic scheduled sampling lowers
// η_k, the probability of feeding a real frame at forecast positions
// T+1..T+K-1. Strategies rss1 and rss2 are the same code path with different
// schedule presets.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "stpred/errors.hpp"
#include "stpred/network.hpp"
#include "stpred/rng.hpp"

namespace stpred {

enum class RssMode { linear, exponential, sigmoid };
enum class Strategy { standard, rss1, rss2 };

inline std::string to_string(RssMode m) {
  switch (m) {
    case RssMode::linear: return "linear";
    case RssMode::exponential: return "exponential";
    case RssMode::sigmoid: return "sigmoid";
  }
  return "?";
}

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::standard: return "standard";
    case Strategy::rss1: return "rss1";
    case Strategy::rss2: return "rss2";
  }
  return "?";
}

inline RssMode parse_rss_mode(const std::string& s) {
  if (s == "linear") return RssMode::linear;
  if (s == "exponential") return RssMode::exponential;
  if (s == "sigmoid") return RssMode::sigmoid;
  throw ConfigError("unknown rss mode '" + s + "'");
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "standard") return Strategy::standard;
  if (s == "rss1" || s == "rss_1") return Strategy::rss1;
  if (s == "rss2" || s == "rss_2") return Strategy::rss2;
  throw ConfigError("unknown rss strategy '" + s + "'");
}

struct RssSchedule {
  RssMode mode = RssMode::exponential;
  double eps_start = 0.5;
  double eps_end = 1.0;
  double alpha_l = 1e-4;   // linear slope per iteration
  double alpha_e = 2000;   // exponential time constant
  double alpha_s = 500;    // sigmoid width
  double beta_s = 2500;    // sigmoid midpoint

  void validate() const {
    if (!(eps_start >= 0.0 && eps_end <= 1.0 && eps_start <= eps_end)) {
      throw ConfigError("rss schedule needs 0 <= eps_start <= eps_end <= 1");
    }
    if (!(alpha_l > 0 && alpha_e > 0 && alpha_s > 0 && beta_s > 0)) {
      throw ConfigError("rss schedule constants alpha_l, alpha_e, alpha_s, beta_s must be positive");
    }
  }
};

struct SsSchedule {
  double eta_start = 1.0;
  double rate = 2e-4;  // linear decay per iteration
  double floor = 0.0;

  void validate() const {
    if (!(floor >= 0.0 && floor <= eta_start && eta_start <= 1.0)) {
      throw ConfigError("ss schedule needs 0 <= floor <= eta_start <= 1");
    }
    if (!(rate >= 0.0)) throw ConfigError("ss decay rate must be non-negative");
  }
};

// The closed forms are arranged so that k = 0 gives ε_s exactly for the
// linear and exponential modes and k = β_s gives the exact midpoint for the
// sigmoid; the final clamp keeps rounding inside [ε_s, ε_e].
inline double epsilon_at(const RssSchedule& s, std::int64_t k) {
  if (k < 0) throw ContractError("epsilon_at: iteration must be non-negative");
  const double kk = static_cast<double>(k);
  const double span = s.eps_end - s.eps_start;
  double e = 0.0;
  switch (s.mode) {
    case RssMode::linear:
      e = std::min(s.eps_start + s.alpha_l * kk, s.eps_end);
      break;
    case RssMode::exponential:
      e = s.eps_start + span * (1.0 - std::exp(-kk / s.alpha_e));
      break;
    case RssMode::sigmoid:
      // ε_s + span / (1 + exp((β_s - k)/α_s)), written through tanh.
      e = 0.5 * (s.eps_start + s.eps_end) + 0.5 * span * std::tanh((kk - s.beta_s) / (2.0 * s.alpha_s));
      break;
  }
  return std::clamp(e, s.eps_start, s.eps_end);
}

inline double eta_at(const SsSchedule& s, std::int64_t k) {
  if (k < 0) throw ContractError("eta_at: iteration must be non-negative");
  return std::max(s.floor, s.eta_start - s.rate * static_cast<double>(k));
}

inline void fit_schedule_constants(RssSchedule& s, std::int64_t iters) {
  const double half = std::max(1.0, static_cast<double>(iters) / 2.0);
  const double span = s.eps_end - s.eps_start;
  s.alpha_l = span > 0 ? span / half : 1.0;
  s.alpha_e = span > 0 ? half / std::log(span / (0.01 * s.eps_end)) : 1.0;
  if (!(s.alpha_e > 0)) s.alpha_e = half;
  s.beta_s = half / 2.0;
  s.alpha_s = s.beta_s / std::log(99.0);
}

// Schedule constants that put each mode at (or within 1% of) ε_e by half of
// an `iters` budget. ε_s is 0 for rss1 and 0.5 otherwise.
inline RssSchedule rss_preset(Strategy strategy, RssMode mode, std::int64_t iters) {
  if (iters < 1) throw ConfigError("rss preset needs a positive iteration budget");
  RssSchedule s;
  s.mode = mode;
  s.eps_start = strategy == Strategy::rss1 ? 0.0 : 0.5;
  s.eps_end = 1.0;
  fit_schedule_constants(s, iters);
  return s;
}

// η reaches the floor at half of an `iters` budget.
inline SsSchedule ss_preset(std::int64_t iters) {
  if (iters < 1) throw ConfigError("ss preset needs a positive iteration budget");
  SsSchedule s;
  s.rate = (s.eta_start - s.floor) / std::max(1.0, static_cast<double>(iters) / 2.0);
  return s;
}

// One sequence's mask. Encode positions 2..T are all true for the standard
// strategy and Bernoulli(ε) otherwise; forecast positions T+1..T+K-1 are
// Bernoulli(η). Draws happen in position order.
inline SamplingMask draw_mask(double eps, double eta, int T, int K, Strategy strategy, Rng& rng) {
  if (T < 2 || K < 1) throw ContractError("draw_mask: need T >= 2 and K >= 1");
  if (!(eps >= 0.0 && eps <= 1.0)) throw ContractError("draw_mask: epsilon " + std::to_string(eps) + " outside [0,1]");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ContractError("draw_mask: eta " + std::to_string(eta) + " outside [0,1]");
  SamplingMask m(T, K, true);
  if (strategy != Strategy::standard) {
    for (int t = 2; t <= T; ++t) m.set(t, rng.bernoulli(eps));
  }
  for (int t = T + 1; t <= T + K - 1; ++t) m.set(t, rng.bernoulli(eta));
  return m;
}

}  // namespace stpred
