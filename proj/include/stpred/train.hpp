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

// Training loop, evaluation, frame generation and diagnostics.
//
// Iteration k of a run is a pure function of (config, k, parameters, Adam
// state): the batch, the sampling masks and the schedule values are all
// derived from the seed and k through split rng streams. A run resumed from
// a checkpoint written after iteration k therefore continues exactly as the
// uninterrupted run would.
//
// Per-iteration objective, averaged over the batch:
//   ( Σ_{t=2}^{T+K} ||x̂_t - X_t||² + λ_dec · L_decouple ) / N

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stpred/checkpoint.hpp"
#include "stpred/config.hpp"
#include "stpred/curriculum.hpp"
#include "stpred/data.hpp"
#include "stpred/decoupling.hpp"
#include "stpred/errors.hpp"
#include "stpred/metrics.hpp"
#include "stpred/network.hpp"
#include "stpred/optim.hpp"
#include "stpred/rng.hpp"

namespace stpred {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  NetworkConfig net;
  int T = 10;
  int K = 10;
  int batch = 8;
  std::int64_t iters = 3000;
  Strategy strategy = Strategy::rss2;
  RssSchedule rss;
  SsSchedule ss;
  double lambda_dec = 1.0;
  double lr = 1e-4;
  double clip = 1.0;  // global grad-norm bound; 0 disables
  std::uint64_t seed = 1;

  DatasetConfig data;          // sprite generator (streaming mode and eval set)
  std::string data_path;       // fixed dataset file; empty = generated data
  std::int64_t train_size = 0; // > 0: fixed generated training set of this size

  std::string out_dir;  // logs and checkpoints; empty = none
  std::int64_t eval_interval = 500;
  std::int64_t checkpoint_interval = 0;  // 0 = final checkpoint only
  std::int64_t log_interval = 1;
  int eval_size = 64;
  std::uint64_t eval_seed = 20260101;

  void validate() const {
    net.validate();
    if (T < 2 || K < 1) throw ConfigError("training needs T >= 2 and K >= 1");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (iters < 1) throw ConfigError("iteration budget must be >= 1");
    rss.validate();
    ss.validate();
    if (!(lambda_dec >= 0.0)) throw ConfigError("lambda-dec must be non-negative");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(clip >= 0.0)) throw ConfigError("clip must be non-negative");
    data.validate();
    if (data_path.empty() && data.length < T + K) {
      throw ConfigError("generated sequences have " + std::to_string(data.length) + " frames, need T + K = " +
                        std::to_string(T + K));
    }
    if (net.variant == Variant::stlstm_action && data_path.empty() && !data.actions) {
      throw ConfigError("stlstm_action needs an action dataset (set actions = true)");
    }
    if (eval_size < 1) throw ConfigError("eval-size must be >= 1");
  }
};

namespace detail {

inline std::string join_path(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

}  // namespace detail

// Every key equals a long CLI flag of `stpred train`. Schedule constants that
// are not given are derived from the budget (see fit_schedule_constants).
inline TrainConfig train_config_from(const KeyValues& kv) {
  static const char* kKnown[] = {
      "seed",       "variant",     "layers",      "channels",     "kernel",          "patch",
      "T",          "K",           "rss-mode",    "rss-strategy", "eps-start",       "eps-end",
      "alpha-l",    "alpha-e",     "alpha-s",     "beta-s",       "eta-start",       "eta-rate",
      "eta-floor",  "lambda-dec",  "iters",       "batch",        "out",             "lr",
      "clip",       "data",        "train-size",  "canvas",       "sprites",         "sprite-size",
      "speed-min",  "speed-max",   "sprite-style", "actions",     "action-step",     "action-rate",
      "eval-interval", "eval-size", "eval-seed",  "checkpoint-interval", "log-interval", "length"};
  for (const auto& k : kv.keys()) {
    if (std::find_if(std::begin(kKnown), std::end(kKnown), [&](const char* s) { return k == s; }) == std::end(kKnown)) {
      throw ConfigError("unknown config key '" + k + "'");
    }
  }
  TrainConfig c;
  auto get_i = [&](const char* key, auto& dst) {
    if (kv.has(key)) dst = static_cast<std::remove_reference_t<decltype(dst)>>(kv.integer(key));
  };
  auto get_r = [&](const char* key, double& dst) {
    if (kv.has(key)) dst = kv.real(key);
  };
  get_i("seed", c.seed);
  if (kv.has("variant")) c.net.variant = parse_variant(kv.str("variant"));
  get_i("layers", c.net.layers);
  get_i("channels", c.net.channels);
  get_i("kernel", c.net.kernel);
  get_i("patch", c.net.patch);
  get_i("T", c.T);
  get_i("K", c.K);
  get_i("iters", c.iters);
  get_i("batch", c.batch);
  get_r("lambda-dec", c.lambda_dec);
  get_r("lr", c.lr);
  get_r("clip", c.clip);
  if (kv.has("out")) c.out_dir = kv.str("out");
  if (kv.has("data")) c.data_path = kv.str("data");
  get_i("train-size", c.train_size);
  get_i("eval-interval", c.eval_interval);
  get_i("checkpoint-interval", c.checkpoint_interval);
  get_i("log-interval", c.log_interval);
  get_i("eval-size", c.eval_size);
  get_i("eval-seed", c.eval_seed);

  if (kv.has("canvas")) c.data.height = c.data.width = static_cast<int>(kv.integer("canvas"));
  get_i("sprites", c.data.num_sprites);
  get_i("sprite-size", c.data.sprite_size);
  get_r("speed-min", c.data.speed_min);
  get_r("speed-max", c.data.speed_max);
  if (kv.has("sprite-style")) c.data.style = parse_sprite_style(kv.str("sprite-style"));
  if (kv.has("actions")) c.data.actions = kv.boolean("actions");
  get_r("action-step", c.data.action_step);
  get_r("action-rate", c.data.action_rate);
  c.data.length = c.T + c.K;
  get_i("length", c.data.length);
  if (c.net.variant == Variant::stlstm_action) c.data.actions = true;

  c.net.in_channels = 1;
  c.net.height = c.data.height;
  c.net.width = c.data.width;
  c.net.action_dim = c.net.variant == Variant::stlstm_action ? DatasetConfig::kActionDim : 0;

  if (kv.has("rss-strategy")) c.strategy = parse_strategy(kv.str("rss-strategy"));
  if (kv.has("rss-mode")) c.rss.mode = parse_rss_mode(kv.str("rss-mode"));
  c.rss.eps_start = c.strategy == Strategy::rss1 ? 0.0 : 0.5;
  c.rss.eps_end = 1.0;
  get_r("eps-start", c.rss.eps_start);
  get_r("eps-end", c.rss.eps_end);
  fit_schedule_constants(c.rss, c.iters);
  get_r("alpha-l", c.rss.alpha_l);
  get_r("alpha-e", c.rss.alpha_e);
  get_r("alpha-s", c.rss.alpha_s);
  get_r("beta-s", c.rss.beta_s);
  c.ss = ss_preset(std::max<std::int64_t>(c.iters, 1));
  get_r("eta-start", c.ss.eta_start);
  get_r("eta-floor", c.ss.floor);
  c.ss.rate = (c.ss.eta_start - c.ss.floor) / std::max(1.0, static_cast<double>(c.iters) / 2.0);
  get_r("eta-rate", c.ss.rate);
  return c;
}

// Fully resolved keys; train_config_from(to_key_values(c)) reproduces c.
inline KeyValues to_key_values(const TrainConfig& c) {
  KeyValues kv;
  kv.set("seed", static_cast<std::int64_t>(c.seed));
  kv.set("variant", to_string(c.net.variant));
  kv.set("layers", c.net.layers);
  kv.set("channels", c.net.channels);
  kv.set("kernel", c.net.kernel);
  kv.set("patch", c.net.patch);
  kv.set("T", c.T);
  kv.set("K", c.K);
  kv.set("rss-mode", to_string(c.rss.mode));
  kv.set("rss-strategy", to_string(c.strategy));
  kv.set("eps-start", c.rss.eps_start);
  kv.set("eps-end", c.rss.eps_end);
  kv.set("alpha-l", c.rss.alpha_l);
  kv.set("alpha-e", c.rss.alpha_e);
  kv.set("alpha-s", c.rss.alpha_s);
  kv.set("beta-s", c.rss.beta_s);
  kv.set("eta-start", c.ss.eta_start);
  kv.set("eta-rate", c.ss.rate);
  kv.set("eta-floor", c.ss.floor);
  kv.set("lambda-dec", c.lambda_dec);
  kv.set("iters", c.iters);
  kv.set("batch", c.batch);
  if (!c.out_dir.empty()) kv.set("out", c.out_dir);
  kv.set("lr", c.lr);
  kv.set("clip", c.clip);
  if (!c.data_path.empty()) kv.set("data", c.data_path);
  kv.set("train-size", c.train_size);
  kv.set("canvas", c.data.height);
  kv.set("sprites", c.data.num_sprites);
  kv.set("sprite-size", c.data.sprite_size);
  kv.set("speed-min", c.data.speed_min);
  kv.set("speed-max", c.data.speed_max);
  kv.set("sprite-style", to_string(c.data.style));
  kv.set("actions", c.data.actions);
  kv.set("action-step", c.data.action_step);
  kv.set("action-rate", c.data.action_rate);
  kv.set("length", c.data.length);
  kv.set("eval-interval", c.eval_interval);
  kv.set("eval-size", c.eval_size);
  kv.set("eval-seed", static_cast<std::int64_t>(c.eval_seed));
  kv.set("checkpoint-interval", c.checkpoint_interval);
  kv.set("log-interval", c.log_interval);
  return kv;
}

// Training keys of a checkpoint config block (drops the network echo and
// optimizer bookkeeping written by save_checkpoint).
inline KeyValues training_keys(const KeyValues& ck) {
  static const char* kSkip[] = {"decouple", "iteration", "adam",     "adam-lr",      "adam-beta1",
                                "adam-beta2", "adam-eps", "adam-step", "adam-moments", "in-channels",
                                "height",   "width",     "action-dim"};
  KeyValues kv;
  for (const auto& k : ck.keys()) {
    if (std::find_if(std::begin(kSkip), std::end(kSkip), [&](const char* s) { return k == s; }) == std::end(kSkip)) {
      kv.set(k, ck.str(k));
    }
  }
  return kv;
}

// Standalone dataset generation (`stpred gen-data`).
struct DatasetRequest {
  DatasetConfig data;
  std::size_t count = 1000;
  std::uint64_t seed = 1;
};

inline DatasetRequest dataset_request_from(const KeyValues& kv) {
  static const char* kKnown[] = {"canvas",      "sprites",     "sprite-size", "speed-min", "speed-max", "sprite-style",
                                 "actions",     "action-step", "action-rate", "length",    "count",     "seed"};
  for (const auto& k : kv.keys()) {
    if (std::find_if(std::begin(kKnown), std::end(kKnown), [&](const char* s) { return k == s; }) == std::end(kKnown)) {
      throw ConfigError("unknown dataset key '" + k + "'");
    }
  }
  DatasetRequest r;
  DatasetConfig& d = r.data;
  if (kv.has("canvas")) d.height = d.width = static_cast<int>(kv.integer("canvas"));
  if (kv.has("sprites")) d.num_sprites = static_cast<int>(kv.integer("sprites"));
  if (kv.has("sprite-size")) d.sprite_size = static_cast<int>(kv.integer("sprite-size"));
  if (kv.has("speed-min")) d.speed_min = kv.real("speed-min");
  if (kv.has("speed-max")) d.speed_max = kv.real("speed-max");
  if (kv.has("sprite-style")) d.style = parse_sprite_style(kv.str("sprite-style"));
  if (kv.has("actions")) d.actions = kv.boolean("actions");
  if (kv.has("action-step")) d.action_step = kv.real("action-step");
  if (kv.has("action-rate")) d.action_rate = kv.real("action-rate");
  if (kv.has("length")) d.length = static_cast<int>(kv.integer("length"));
  if (kv.has("count")) {
    const std::int64_t n = kv.integer("count");
    if (n < 1) throw ConfigError("count must be >= 1");
    r.count = static_cast<std::size_t>(n);
  }
  if (kv.has("seed")) r.seed = static_cast<std::uint64_t>(kv.integer("seed"));
  d.validate();
  return r;
}

template <typename S = float>
std::vector<FrameSequenceT<S>> generate_dataset(const DatasetRequest& r) {
  return gen_dataset<S>(r.data, r.count, Rng(r.seed).split(streams::kData));
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

template <typename S>
void clamp01(TensorT<S>& t) {
  for (auto& v : t.data()) v = std::clamp(v, S(0), S(1));
}

// Forecast of X_{T+1} .. X_{T+K} under the inference scheme (real frames
// through T, own predictions afterwards). Values are not clamped.
template <typename S>
std::vector<TensorT<S>> forecast(ModelT<S>& model, const FrameSequenceT<S>& seq, int T, int K) {
  if (T < 1 || K < 1) throw ContractError("forecast: need T >= 1 and K >= 1");
  std::vector<TensorT<S>> all = predict(model, seq, T, K, SamplingMask::inference(T, K));
  return std::vector<TensorT<S>>(all.begin() + (T - 1), all.end());
}

template <typename S>
struct ModelPredictor {
  ModelT<S>* model;
  std::vector<TensorT<S>> operator()(const FrameSequenceT<S>& seq, int T, int K) const {
    return forecast(*model, seq, T, K);
  }
};

// Repeats the last context frame.
struct CopyLastPredictor {
  template <typename S>
  std::vector<TensorT<S>> operator()(const FrameSequenceT<S>& seq, int T, int K) const {
    if (T < 1 || seq.length() < T) throw ContractError("copy-last: context is empty");
    return std::vector<TensorT<S>>(static_cast<std::size_t>(K), seq.frames[T - 1]);
  }
};

struct EvalOptions {
  std::vector<double> thresholds{0.5};
  int batch = 16;
};

// Frame metrics of clamped forecasts for rows t = T+1 .. T+K.
template <typename S, typename Predictor>
MetricReport evaluate(Predictor&& predictor, const std::vector<FrameSequenceT<S>>& data, int T, int K,
                      const EvalOptions& opt = {}) {
  if (data.empty()) throw ContractError("evaluate: empty dataset");
  if (T < 1 || K < 1) throw ContractError("evaluate: need T >= 1 and K >= 1");
  if (opt.batch < 1) throw ContractError("evaluate: batch must be >= 1");
  MetricAccumulator acc(T + 1, K, opt.thresholds);
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(opt.batch)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + opt.batch); ++i) idx.push_back(i);
    const FrameSequenceT<S> b = stack_batch(data, std::span<const std::size_t>(idx));
    if (b.length() < T + K) throw ContractError("evaluate: sequences are shorter than T + K");
    std::vector<TensorT<S>> pred = predictor(b, T, K);
    if (pred.size() != static_cast<std::size_t>(K)) throw ContractError("evaluate: predictor returned wrong horizon");
    for (int k = 0; k < K; ++k) {
      clamp01(pred[k]);
      acc.add(k, pred[k], b.frames[T + k]);
    }
  }
  return acc.finish();
}

template <typename S>
void check_data_matches(const NetworkConfig& net, const std::vector<FrameSequenceT<S>>& data) {
  if (data.empty()) throw ContractError("empty dataset");
  const Shape s = data.front().frames.at(0).shape();
  if (s.c() != net.in_channels || s.h() != net.height || s.w() != net.width) {
    throw ConfigError("data frames " + s.str() + " do not match the model's " + std::to_string(net.in_channels) + "x" +
                      std::to_string(net.height) + "x" + std::to_string(net.width));
  }
  if (net.variant == Variant::stlstm_action && !data.front().has_actions()) {
    throw ConfigError("the stlstm_action model needs a dataset with actions");
  }
}

template <typename S>
MetricReport evaluate(ModelT<S>& model, const std::vector<FrameSequenceT<S>>& data, int T, int K,
                      const EvalOptions& opt = {}) {
  check_data_matches(model.config, data);
  return evaluate(ModelPredictor<S>{&model}, data, T, K, opt);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct IterationLog {
  std::int64_t k = 0;
  double eps = 0.0;
  double eta = 0.0;
  double loss_rec = 0.0;  // reconstruction term / N
  double loss_dec = 0.0;  // λ_dec · decoupling term / N
  double loss_total = 0.0;
  double grad_norm = 0.0;  // before clipping

  bool operator==(const IterationLog&) const = default;
};

inline std::string log_csv_header() { return "k,eps,eta,loss_rec,loss_dec,loss_total,grad_norm"; }

inline std::string to_csv_row(const IterationLog& l) {
  std::ostringstream os;
  os.precision(17);
  os << l.k << "," << l.eps << "," << l.eta << "," << l.loss_rec << "," << l.loss_dec << "," << l.loss_total << ","
     << l.grad_norm;
  return os.str();
}

template <typename S = float>
class TrainerT {
 public:
  explicit TrainerT(TrainConfig cfg) : cfg_(std::move(cfg)) {
    load_fixed_data();
    cfg_.validate();
    Rng init = Rng(cfg_.seed).split(streams::kInit);
    model_ = init_model<S>(cfg_.net, init);
    adam_.lr = cfg_.lr;
  }

  // Continues a run from a checkpoint written by save(). iters_override
  // extends or shortens the budget; schedule constants are kept as saved.
  static TrainerT resume(const std::string& path, std::optional<std::int64_t> iters_override = std::nullopt) {
    CheckpointT<S> ck = load_checkpoint<S>(path);
    KeyValues kv = training_keys(ck.config);
    if (iters_override) kv.set("iters", *iters_override);
    TrainerT t(train_config_from(kv));
    if (!(ck.model.config.variant == t.cfg_.net.variant)) throw FormatError("checkpoint network does not match its config");
    t.model_ = std::move(ck.model);
    if (!t.model_.w_decouple && has_dual_memory(t.cfg_.net.variant)) {
      throw ContractError("cannot resume training from a stripped model");
    }
    if (!ck.adam) throw FormatError("checkpoint has no optimizer state to resume from");
    t.adam_ = std::move(*ck.adam);
    t.iteration_ = ck.iteration;
    return t;
  }

  const TrainConfig& config() const { return cfg_; }
  ModelT<S>& model() { return model_; }
  const ModelT<S>& model() const { return model_; }
  const AdamStateT<S>& adam() const { return adam_; }
  std::int64_t iteration() const { return iteration_; }

  // Batch for iteration k: N sequences of T + K frames.
  FrameSequenceT<S> batch_for(std::int64_t k) const {
    const Rng root = Rng(cfg_.seed).split(streams::kData);
    std::vector<std::size_t> idx;
    if (!fixed_.empty()) {
      Rng r = root.split(1).split(static_cast<std::uint64_t>(k));
      for (int b = 0; b < cfg_.batch; ++b) idx.push_back(static_cast<std::size_t>(r.below(fixed_.size())));
      return trim(stack_batch(fixed_, std::span<const std::size_t>(idx)));
    }
    const Rng stream = root.split(2).split(static_cast<std::uint64_t>(k));
    DatasetConfig dc = cfg_.data;
    dc.length = cfg_.T + cfg_.K;
    std::vector<FrameSequenceT<S>> seqs;
    for (int b = 0; b < cfg_.batch; ++b) {
      Rng r = stream.split(static_cast<std::uint64_t>(b));
      seqs.push_back(gen_sequence<S>(dc, r));
      idx.push_back(static_cast<std::size_t>(b));
    }
    return stack_batch(seqs, std::span<const std::size_t>(idx));
  }

  std::vector<SamplingMask> masks_for(std::int64_t k, double eps, double eta) const {
    Rng r = Rng(cfg_.seed).split(streams::kMask).split(static_cast<std::uint64_t>(k));
    std::vector<SamplingMask> out;
    for (int b = 0; b < cfg_.batch; ++b) out.push_back(draw_mask(eps, eta, cfg_.T, cfg_.K, cfg_.strategy, r));
    return out;
  }

  // One optimisation step at the current iteration.
  IterationLog step() {
    const std::int64_t k = iteration_;
    IterationLog log;
    log.k = k;
    log.eps = epsilon_at(cfg_.rss, k);
    log.eta = eta_at(cfg_.ss, k);
    const FrameSequenceT<S> batch = batch_for(k);
    const std::vector<SamplingMask> masks = masks_for(k, log.eps, log.eta);

    TapeT<S> tape(true);
    RolloutT<S> r = rollout(model_, tape, batch, cfg_.T, cfg_.K, std::span<const SamplingMask>(masks));
    const S inv_n = static_cast<S>(1.0 / cfg_.batch);
    std::vector<VarT<S>> terms;
    for (int t = 2; t <= cfg_.T + cfg_.K; ++t) {
      terms.push_back(mse_sum(r.predictions[t - 2], tape.constant(batch.frames[t - 1])));
    }
    const VarT<S> rec = scale(add_n<S>(terms), inv_n);
    VarT<S> total = rec;
    std::optional<VarT<S>> dec;
    if (cfg_.lambda_dec > 0.0 && has_dual_memory(cfg_.net.variant)) {
      dec = scale(sequence_decouple_loss(model_, tape, r.caches), static_cast<S>(cfg_.lambda_dec / cfg_.batch));
      total = add(rec, *dec);
    }
    log.loss_rec = static_cast<double>(rec.value()[0]);
    log.loss_dec = dec ? static_cast<double>(dec->value()[0]) : 0.0;
    log.loss_total = static_cast<double>(total.value()[0]);
    if (!std::isfinite(log.loss_total)) {
      std::ostringstream os;
      os << "non-finite loss at iteration " << k << ": loss_rec=" << log.loss_rec << " loss_dec=" << log.loss_dec
         << " eps=" << log.eps << " eta=" << log.eta;
      throw NumericError(os.str());
    }
    model_.zero_grad();
    tape.backward(total);
    auto params = model_.parameters();
    log.grad_norm = clip_grad_norm<S>(params, cfg_.clip);
    if (!std::isfinite(log.grad_norm)) {
      throw NumericError("non-finite gradient norm at iteration " + std::to_string(k));
    }
    adam_step<S>(params, adam_);
    ++iteration_;
    return log;
  }

  // Runs until the budget is spent. Writes train_log.csv, eval_log.csv and
  // checkpoint.stpc under out_dir when it is set.
  std::vector<IterationLog> run(const std::function<void(const IterationLog&)>& on_log = {}) {
    std::vector<IterationLog> logs;
    std::ofstream train_log, eval_log;
    if (!cfg_.out_dir.empty()) {
      std::filesystem::create_directories(cfg_.out_dir);
      const bool fresh = iteration_ == 0;
      const auto mode = fresh ? std::ios::trunc : std::ios::app;
      train_log.open(detail::join_path(cfg_.out_dir, "train_log.csv"), std::ios::out | mode);
      eval_log.open(detail::join_path(cfg_.out_dir, "eval_log.csv"), std::ios::out | mode);
      if (!train_log || !eval_log) throw IoError("cannot write logs under '" + cfg_.out_dir + "'");
      if (fresh) {
        train_log << log_csv_header() << "\n";
        eval_log << "k,mse,psnr,ssim\n";
      }
    }
    while (iteration_ < cfg_.iters) {
      IterationLog l = step();
      logs.push_back(l);
      if (on_log) on_log(l);
      if (train_log.is_open() && cfg_.log_interval > 0 && l.k % cfg_.log_interval == 0) {
        train_log << to_csv_row(l) << "\n";
      }
      const bool last = iteration_ == cfg_.iters;
      if (eval_log.is_open() && cfg_.eval_interval > 0 && (iteration_ % cfg_.eval_interval == 0 || last)) {
        const MetricReport rep = evaluate(model_, eval_set(), cfg_.T, cfg_.K);
        eval_log << iteration_ << "," << rep.mean_mse() << "," << rep.mean_psnr() << "," << rep.mean_ssim() << "\n";
        eval_log.flush();
      }
      if (!cfg_.out_dir.empty() &&
          (last || (cfg_.checkpoint_interval > 0 && iteration_ % cfg_.checkpoint_interval == 0))) {
        save(detail::join_path(cfg_.out_dir, "checkpoint.stpc"));
      }
    }
    return logs;
  }

  void save(const std::string& path) const {
    save_checkpoint(path, model_, &adam_, iteration_, to_key_values(cfg_));
  }

  // Held-out sequences drawn from the eval seed, independent of the training
  // seed and data.
  const std::vector<FrameSequenceT<S>>& eval_set() {
    if (eval_.empty()) eval_ = held_out_set<S>(cfg_, cfg_.eval_size);
    return eval_;
  }

  template <typename U = S>
  static std::vector<FrameSequenceT<U>> held_out_set(const TrainConfig& cfg, std::size_t count) {
    DatasetConfig dc = cfg.data;
    dc.length = cfg.T + cfg.K;
    return gen_dataset<U>(dc, count, Rng(cfg.eval_seed).split(streams::kEval));
  }

 private:
  void load_fixed_data() {
    if (!cfg_.data_path.empty()) {
      fixed_ = load_dataset<S>(cfg_.data_path);
      if (fixed_.empty()) throw ConfigError("dataset '" + cfg_.data_path + "' is empty");
      const Shape s = fixed_.front().frames.at(0).shape();
      if (fixed_.front().length() < cfg_.T + cfg_.K) {
        throw ConfigError("dataset sequences have " + std::to_string(fixed_.front().length()) + " frames, need " +
                          std::to_string(cfg_.T + cfg_.K));
      }
      cfg_.net.in_channels = s.c();
      cfg_.net.height = s.h();
      cfg_.net.width = s.w();
      if (cfg_.net.variant == Variant::stlstm_action && !fixed_.front().has_actions()) {
        throw ConfigError("stlstm_action needs a dataset with actions");
      }
    } else if (cfg_.train_size > 0) {
      DatasetConfig dc = cfg_.data;
      dc.length = cfg_.T + cfg_.K;
      fixed_ = gen_dataset<S>(dc, static_cast<std::size_t>(cfg_.train_size),
                              Rng(cfg_.seed).split(streams::kData).split(0));
    }
  }

  FrameSequenceT<S> trim(FrameSequenceT<S> b) const {
    const auto n = static_cast<std::size_t>(cfg_.T + cfg_.K);
    if (b.frames.size() > n) b.frames.resize(n);
    if (b.actions.size() > n) b.actions.resize(n);
    return b;
  }

  TrainConfig cfg_;
  ModelT<S> model_;
  AdamStateT<S> adam_;
  std::int64_t iteration_ = 0;
  std::vector<FrameSequenceT<S>> fixed_;
  std::vector<FrameSequenceT<S>> eval_;
};

using Trainer = TrainerT<float>;

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

// K frames after the T context frames, clamped to [0, 1]. For action models
// the context must carry actions for steps 1 .. T+K-1.
template <typename S>
std::vector<TensorT<S>> generate(ModelT<S>& model, const FrameSequenceT<S>& context, int K) {
  const int T = context.length();
  if (T < 1) throw ContractError("generate: context needs at least one frame");
  if (K < 1) throw ContractError("generate: horizon must be >= 1");
  FrameSequenceT<S> seq = context;
  // Frames after T are never read under the inference mask; pad with zeros.
  while (seq.length() < T + K) seq.frames.push_back(TensorT<S>(context.frames.back().shape()));
  std::vector<TensorT<S>> out = forecast(model, seq, T, K);
  for (auto& f : out) clamp01(f);
  return out;
}

// Binary PGM (J = 1) or PPM (J = 3) of one frame [1, J, H, W]; values are
// clamped to [0, 1] and scaled to 0..255.
template <typename S>
void write_pnm(const std::string& path, const TensorT<S>& frame) {
  require_rank4(frame.shape(), "write_pnm");
  const Shape s = frame.shape();
  if (s.n() != 1 || (s.c() != 1 && s.c() != 3)) throw ShapeError("write_pnm: need [1,1,H,W] or [1,3,H,W], got " + s.str());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << (s.c() == 1 ? "P5" : "P6") << "\n" << s.w() << " " << s.h() << "\n255\n";
  std::vector<unsigned char> px;
  px.reserve(static_cast<std::size_t>(s.h()) * s.w() * s.c());
  for (int y = 0; y < s.h(); ++y)
    for (int x = 0; x < s.w(); ++x)
      for (int c = 0; c < s.c(); ++c) {
        const double v = std::clamp(static_cast<double>(frame.at(0, c, y, x)), 0.0, 1.0);
        px.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!f) throw IoError("write failed on '" + path + "'");
}

template <typename S = float>
TensorT<S> read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  f >> magic >> w >> h >> maxv;
  if (!f || (magic != "P5" && magic != "P6") || w < 1 || h < 1 || maxv != 255) {
    throw FormatError("'" + path + "' is not an 8-bit binary PGM/PPM");
  }
  f.get();
  const int c = magic == "P5" ? 1 : 3;
  std::vector<unsigned char> px(static_cast<std::size_t>(w) * h * c);
  f.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (static_cast<std::size_t>(f.gcount()) != px.size()) throw FormatError("'" + path + "' is truncated");
  TensorT<S> out(nchw(1, c, h, w));
  std::size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) out.at(0, ch, y, x) = static_cast<S>(px[i++] / 255.0);
  return out;
}

// Writes frame_<t>.pgm/ppm for t = first_t, first_t + 1, ...; returns paths.
template <typename S>
std::vector<std::string> write_frames(const std::string& dir, const std::vector<TensorT<S>>& frames, int first_t) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%03d.%s", first_t + static_cast<int>(i),
                  frames[i].shape().c() == 3 ? "ppm" : "pgm");
    paths.push_back(detail::join_path(dir, name));
    write_pnm(paths.back(), frames[i]);
  }
  return paths;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

// Forget-gate saturation per layer under the inference scheme; entry l is
// layer l, the last entry pools all layers.
template <typename S>
std::vector<SaturationRatio> saturation_by_layer(ModelT<S>& model, const FrameSequenceT<S>& batch, int T, int K,
                                                 double threshold = 0.1) {
  TapeT<S> tape(false);
  RolloutT<S> r = rollout(model, tape, batch, T, K, SamplingMask::inference(T, K));
  const int L = model.config.layers;
  std::vector<std::vector<GateCacheT<S>>> per_layer(static_cast<std::size_t>(L));
  std::vector<GateCacheT<S>> all;
  for (const auto& step_caches : r.caches)
    for (const auto& c : step_caches) {
      per_layer[c.layer].push_back(c);
      all.push_back(c);
    }
  std::vector<SaturationRatio> out;
  for (const auto& v : per_layer) out.push_back(forget_saturation(v, threshold));
  out.push_back(forget_saturation(all, threshold));
  return out;
}

}  // namespace stpred
