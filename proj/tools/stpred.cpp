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

// stpred command-line interface: train, eval, generate, diag, gen-data.
// Failures print one line `stpred: error: <kind>: <message>` to stderr and
// exit nonzero (1 for runtime errors, 2 for usage errors).

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stpred/stpred.hpp"

namespace {

using stpred::KeyValues;

// Long flags of `train`; each is also a config-file key.
const std::vector<std::string> kTrainFlags = {
    "seed",          "variant",     "layers",     "channels",     "kernel",       "patch",      "T",
    "K",             "rss-mode",    "rss-strategy", "eps-start",  "eps-end",      "alpha-l",    "alpha-e",
    "alpha-s",       "beta-s",      "eta-start",  "eta-rate",     "eta-floor",    "lambda-dec", "iters",
    "batch",         "out",         "lr",         "clip",         "data",         "train-size", "canvas",
    "sprites",       "sprite-size", "speed-min",  "speed-max",    "sprite-style", "actions",    "action-step",
    "action-rate",   "length",      "eval-interval", "eval-size", "eval-seed",    "checkpoint-interval",
    "log-interval"};

const std::vector<std::string> kDataFlags = {"canvas",  "sprites",     "sprite-size", "speed-min",
                                             "speed-max", "sprite-style", "actions",   "action-step",
                                             "action-rate", "length",    "count",       "seed"};

void add_key_flags(CLI::App* app, const std::vector<std::string>& keys, std::map<std::string, std::string>& dst) {
  for (const auto& k : keys) app->add_option("--" + k, dst[k], "config key '" + k + "'");
}

// Config file first, explicit flags override.
KeyValues merged_keys(const std::string& config_path, const std::map<std::string, std::string>& flags,
                      const CLI::App* app) {
  KeyValues kv = config_path.empty() ? KeyValues{} : KeyValues::load(config_path);
  KeyValues over;
  for (const auto& [k, v] : flags) {
    if (app->count("--" + k) > 0) over.set(k, v);
  }
  kv.merge(over);
  return kv;
}

// Synthetic sequences are long enough for the requested T + K.
std::vector<stpred::FrameSequence> eval_data(const std::string& data_path, bool synthetic, int count,
                                             const stpred::Checkpoint& ck, int T, int K) {
  if (!data_path.empty() && synthetic) throw stpred::ConfigError("use either --data or --synthetic, not both");
  if (!data_path.empty()) return stpred::load_dataset<float>(data_path);
  if (count < 1) throw stpred::ConfigError("--count must be >= 1");
  if (T < 1 || K < 1) throw stpred::ConfigError("--T and --K must be >= 1");
  stpred::TrainConfig cfg = stpred::train_config_from(stpred::training_keys(ck.config));
  cfg.T = T;
  cfg.K = K;
  return stpred::Trainer::held_out_set(cfg, static_cast<std::size_t>(count));
}

int train_cmd(const std::string& config, const std::string& resume, const std::map<std::string, std::string>& flags,
              const CLI::App* app, bool quiet) {
  std::optional<stpred::Trainer> tr;
  if (!resume.empty()) {
    for (const auto& [k, v] : flags) {
      if (k != "iters" && app->count("--" + k) > 0) {
        throw stpred::ConfigError("--" + k + " cannot be combined with --resume (the checkpoint fixes it)");
      }
    }
    if (!config.empty()) throw stpred::ConfigError("--config cannot be combined with --resume");
    std::optional<std::int64_t> iters;
    if (app->count("--iters")) iters = KeyValues::parse("iters = " + flags.at("iters")).integer("iters");
    tr.emplace(stpred::Trainer::resume(resume, iters));
  } else {
    tr.emplace(stpred::train_config_from(merged_keys(config, flags, app)));
  }
  const auto& cfg = tr->config();
  const std::int64_t every = std::max<std::int64_t>(1, cfg.iters / 20);
  tr->run([&](const stpred::IterationLog& l) {
    if (!quiet && (l.k % every == 0 || l.k + 1 == cfg.iters)) {
      std::printf("iter %lld  loss %.6g  rec %.6g  dec %.6g  eps %.4f  eta %.4f\n", static_cast<long long>(l.k),
                  l.loss_total, l.loss_rec, l.loss_dec, l.eps, l.eta);
      std::fflush(stdout);
    }
  });
  const stpred::MetricReport rep = stpred::evaluate(tr->model(), tr->eval_set(), cfg.T, cfg.K);
  std::printf("done: %lld iterations, held-out mse %.6g psnr %.4f ssim %.4f\n",
              static_cast<long long>(tr->iteration()), rep.mean_mse(), rep.mean_psnr(), rep.mean_ssim());
  if (!cfg.out_dir.empty()) {
    std::printf("checkpoint: %s\n", stpred::detail::join_path(cfg.out_dir, "checkpoint.stpc").c_str());
  }
  return 0;
}

int eval_cmd(const std::string& ckpt, const std::string& data, bool synthetic, int count, std::optional<int> T,
             std::optional<int> K, const std::string& csv, const std::string& predictor,
             const std::vector<double>& thresholds) {
  stpred::Checkpoint ck = stpred::load_checkpoint<float>(ckpt);
  const stpred::TrainConfig cfg = stpred::train_config_from(stpred::training_keys(ck.config));
  const int t = T.value_or(cfg.T), k = K.value_or(cfg.K);
  const auto seqs = eval_data(data, synthetic, count, ck, t, k);
  stpred::EvalOptions opt;
  if (!thresholds.empty()) opt.thresholds = thresholds;
  stpred::MetricReport rep;
  if (predictor == "model") {
    rep = stpred::evaluate(ck.model, seqs, t, k, opt);
  } else {
    stpred::check_data_matches(ck.model.config, seqs);
    rep = stpred::evaluate(stpred::CopyLastPredictor{}, seqs, t, k, opt);
  }
  if (!csv.empty()) rep.write_csv(csv);
  std::cout << rep.to_csv();
  std::printf("mean: mse %.6g psnr %.4f ssim %.4f\n", rep.mean_mse(), rep.mean_psnr(), rep.mean_ssim());
  return 0;
}

stpred::FrameSequence read_context(const std::string& path, int index, std::optional<int> T) {
  namespace fs = std::filesystem;
  stpred::FrameSequence ctx;
  if (fs::is_directory(path)) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(path)) {
      const auto ext = e.path().extension().string();
      if (ext == ".pgm" || ext == ".ppm") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) ctx.frames.push_back(stpred::read_pnm<float>(f));
    if (ctx.frames.empty()) throw stpred::IoError("no .pgm/.ppm frames in '" + path + "'");
  } else {
    auto seqs = stpred::load_dataset<float>(path);
    if (index < 0 || static_cast<std::size_t>(index) >= seqs.size()) {
      throw stpred::ConfigError("--index " + std::to_string(index) + " out of range (" + std::to_string(seqs.size()) +
                                " sequences)");
    }
    ctx = seqs[static_cast<std::size_t>(index)];
  }
  if (T) {
    if (*T < 1 || *T > ctx.length()) throw stpred::ConfigError("--T must be in [1, " + std::to_string(ctx.length()) + "]");
    ctx.frames.resize(static_cast<std::size_t>(*T));
    // Actions beyond the context are kept: they steer the forecast.
  }
  return ctx;
}

int generate_cmd(const std::string& ckpt, const std::string& context, int horizon, const std::string& out, int index,
                 std::optional<int> T) {
  stpred::Checkpoint ck = stpred::load_checkpoint<float>(ckpt);
  const stpred::FrameSequence ctx = read_context(context, index, T);
  stpred::check_data_matches(ck.model.config, std::vector<stpred::FrameSequence>{ctx});
  const auto frames = stpred::generate(ck.model, ctx, horizon);
  const auto paths = stpred::write_frames(out, frames, ctx.length() + 1);
  for (const auto& p : paths) std::printf("%s\n", p.c_str());
  return 0;
}

int diag_cmd(const std::string& ckpt, const std::string& probe, const std::string& csv, const std::string& data,
             int count, const std::string& mode) {
  stpred::Checkpoint ck = stpred::load_checkpoint<float>(ckpt);
  const stpred::TrainConfig cfg = stpred::train_config_from(stpred::training_keys(ck.config));
  const auto seqs = eval_data(data, false, count, ck, cfg.T, cfg.K);
  stpred::check_data_matches(ck.model.config, seqs);
  std::vector<std::size_t> idx(std::min<std::size_t>(seqs.size(), static_cast<std::size_t>(count)));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto batch = stpred::stack_batch(seqs, std::span<const std::size_t>(idx));
  std::ostringstream os;
  if (probe == "gradients") {
    const auto pm = mode == "accumulated" ? stpred::ProbeMode::accumulated : stpred::ProbeMode::last_loss;
    const auto g = stpred::encoder_gradient_probe(ck.model, batch, cfg.T, cfg.K, pm);
    const int first = pm == stpred::ProbeMode::accumulated ? cfg.T + 1 : 1;
    os << "t,normalized_gradient\n";
    for (std::size_t i = 0; i < g.size(); ++i) os << first + static_cast<int>(i) << "," << g[i] << "\n";
  } else if (probe == "saturation") {
    const auto sat = stpred::saturation_by_layer(ck.model, batch, cfg.T, cfg.K);
    os << "layer,ratio_f,ratio_fprime\n";
    for (std::size_t l = 0; l < sat.size(); ++l) {
      os << (l + 1 == sat.size() ? std::string("all") : std::to_string(l)) << "," << sat[l].ratio_f << ",";
      if (sat[l].ratio_fprime) os << *sat[l].ratio_fprime;
      os << "\n";
    }
  } else {
    if (!ck.model.w_decouple) {
      throw stpred::ContractError("cosine probe needs the training-time projection (checkpoint is stripped)");
    }
    os << "mean_abs_cosine\n" << stpred::mean_abs_cosine(ck.model, batch, cfg.T, cfg.K) << "\n";
  }
  if (!csv.empty()) {
    std::ofstream f(csv);
    if (!f) throw stpred::IoError("cannot open '" + csv + "' for writing");
    f << os.str();
  }
  std::cout << os.str();
  return 0;
}

int gen_data_cmd(const std::string& config, const std::string& out, const std::map<std::string, std::string>& flags,
                 const CLI::App* app) {
  const stpred::DatasetRequest req = stpred::dataset_request_from(merged_keys(config, flags, app));
  const auto seqs = stpred::generate_dataset<float>(req);
  stpred::save_dataset(out, seqs);
  std::printf("wrote %zu sequences of %d frames to %s\n", seqs.size(), req.data.length, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stpred: spatiotemporal predictive learning with dual-memory recurrent networks"};
  app.require_subcommand(1);

  std::map<std::string, std::string> train_flags, data_flags;
  std::string config, resume, ckpt, data, csv, context, out_dir, probe = "gradients", mode = "last", predictor = "model";
  bool synthetic = false, quiet = false;
  int count = 64, horizon = 10, index = 0;
  std::optional<int> T, K;
  std::vector<double> thresholds;

  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_flag("--quiet", quiet, "no progress lines");
  add_key_flags(train, kTrainFlags, train_flags);

  CLI::App* eval = app.add_subcommand("eval", "frame metrics of a checkpoint");
  eval->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "dataset file")->check(CLI::ExistingFile);
  eval->add_flag("--synthetic", synthetic, "held-out sequences from the checkpoint's generator");
  eval->add_option("--count", count, "number of synthetic sequences");
  eval->add_option("--T", T, "context length");
  eval->add_option("--K", K, "forecast horizon");
  eval->add_option("--csv", csv, "write the per-step report here");
  eval->add_option("--predictor", predictor, "model or copy-last")->check(CLI::IsMember({"model", "copy-last"}));
  eval->add_option("--thresholds", thresholds, "CSI thresholds")->delimiter(',');

  CLI::App* gen = app.add_subcommand("generate", "write forecast frames as PGM/PPM images");
  gen->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  gen->add_option("--context", context, "dataset file or directory of frames")->required()->check(CLI::ExistingPath);
  gen->add_option("--horizon", horizon, "frames to generate");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--index", index, "sequence index in a dataset file");
  gen->add_option("--T", T, "context frames taken from the sequence");

  CLI::App* diag = app.add_subcommand("diag", "diagnostics of a checkpoint");
  diag->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  diag->add_option("--probe", probe, "gradients, saturation or cosine")
      ->check(CLI::IsMember({"gradients", "saturation", "cosine"}));
  diag->add_option("--csv", csv, "write the result here");
  diag->add_option("--data", data, "dataset file (default: synthetic held-out set)")->check(CLI::ExistingFile);
  diag->add_option("--count", count, "sequences in the probe batch");
  diag->add_option("--mode", mode, "gradient probe mode: last or accumulated")
      ->check(CLI::IsMember({"last", "accumulated"}));

  CLI::App* gd = app.add_subcommand("gen-data", "write a synthetic sprite dataset");
  gd->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
  gd->add_option("--out", out_dir, "dataset file")->required();
  add_key_flags(gd, kDataFlags, data_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "stpred: error: usage: %s\n", e.what());
    return 2;
  }

  try {
    if (train->parsed()) return train_cmd(config, resume, train_flags, train, quiet);
    if (eval->parsed()) return eval_cmd(ckpt, data, synthetic, count, T, K, csv, predictor, thresholds);
    if (gen->parsed()) return generate_cmd(ckpt, context, horizon, out_dir, index, T);
    if (diag->parsed()) return diag_cmd(ckpt, probe, csv, data, count, mode);
    if (gd->parsed()) return gen_data_cmd(config, out_dir, data_flags, gd);
  } catch (const stpred::Error& e) {
    std::fprintf(stderr, "stpred: error: %s: %s\n", e.kind().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "stpred: error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
