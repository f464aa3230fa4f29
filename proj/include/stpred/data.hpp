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

// Bouncing-sprite sequences and the raw dataset file.
//
// Sprites move with constant speed and reflect off the canvas walls: a
// coordinate that leaves [0, W-s] is mirrored about the wall and the matching
// velocity component is negated. Both axes are handled independently, so a
// corner hit reflects both in the same step. Positions are kept in double and
// rendered at the nearest integer pixel; overlapping sprites combine by
// per-pixel maximum.
//
// The action task adds a commanded velocity change before every move.
//
// File layout ("STPD", version 1, little-endian):
//   magic[4] u32 version u32 num_seq u32 length u32 J u32 H u32 W
//   f32 frames[num_seq][length][J][H][W]
//   optional: magic "ACTN" u32 d_a f32 actions[num_seq][length][d_a]

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "stpred/binary_io.hpp"
#include "stpred/errors.hpp"
#include "stpred/network.hpp"
#include "stpred/rng.hpp"
#include "stpred/tensor.hpp"

namespace stpred {

enum class SpriteStyle { digit_glyph, block, cross };

inline std::string to_string(SpriteStyle s) {
  switch (s) {
    case SpriteStyle::digit_glyph: return "digit_glyph";
    case SpriteStyle::block: return "block";
    case SpriteStyle::cross: return "cross";
  }
  return "?";
}

inline SpriteStyle parse_sprite_style(const std::string& s) {
  if (s == "digit_glyph" || s == "digit") return SpriteStyle::digit_glyph;
  if (s == "block") return SpriteStyle::block;
  if (s == "cross") return SpriteStyle::cross;
  throw ConfigError("unknown sprite style '" + s + "'");
}

struct DatasetConfig {
  int num_sprites = 2;
  int height = 64;
  int width = 64;
  int sprite_size = 16;
  double speed_min = 2.0;
  double speed_max = 4.0;
  int length = 20;  // T + K
  SpriteStyle style = SpriteStyle::digit_glyph;
  bool actions = false;       // action task
  double action_step = 1.0;   // |Δv| per nonzero action component
  double action_rate = 0.5;   // probability that a step carries a command

  static constexpr int kActionDim = 2;

  void validate() const {
    if (num_sprites < 1) throw ConfigError("num_sprites must be >= 1");
    if (height < 1 || width < 1) throw ConfigError("canvas must be non-empty");
    if (sprite_size < 1 || sprite_size > height || sprite_size > width) {
      throw ConfigError("sprite_size " + std::to_string(sprite_size) + " does not fit the canvas");
    }
    if (!(speed_min > 0 && speed_min <= speed_max)) throw ConfigError("speed range must satisfy 0 < min <= max");
    if (length < 1) throw ConfigError("sequence length must be >= 1");
    if (actions && !(action_step > 0 && action_rate >= 0 && action_rate <= 1)) {
      throw ConfigError("action task needs action_step > 0 and action_rate in [0,1]");
    }
  }
};

struct Sprite {
  double x = 0, y = 0;    // top-left, pixels
  double vx = 0, vy = 0;  // pixels per step
  int size = 0;
  std::vector<float> bitmap;  // size*size, row-major, values in [0,1]
};

struct SpriteWorld {
  int height = 0;
  int width = 0;
  std::vector<Sprite> sprites;
};

// ---------------------------------------------------------------------------
// Glyphs
// ---------------------------------------------------------------------------

namespace detail {

inline void fill_rect(std::vector<float>& bm, int s, int x0, int y0, int x1, int y1) {
  for (int y = std::max(0, y0); y < std::min(s, y1); ++y)
    for (int x = std::max(0, x0); x < std::min(s, x1); ++x) bm[y * s + x] = 1.0f;
}

// Seven-segment digit with stroke width ~s/6.
inline std::vector<float> digit_bitmap(int digit, int s) {
  static constexpr unsigned char kSegments[10] = {0x3F, 0x06, 0x5B, 0x4F, 0x66, 0x6D, 0x7D, 0x07, 0x7F, 0x6F};
  std::vector<float> bm(static_cast<std::size_t>(s) * s, 0.0f);
  const int t = std::max(1, s / 6);
  const int l = s / 6, r = s - s / 6, top = 0, mid = s / 2, bot = s;
  const unsigned char seg = kSegments[digit % 10];
  if (seg & 0x01) fill_rect(bm, s, l, top, r, top + t);                  // a
  if (seg & 0x02) fill_rect(bm, s, r - t, top, r, mid + t / 2 + 1);      // b
  if (seg & 0x04) fill_rect(bm, s, r - t, mid - t / 2, r, bot);          // c
  if (seg & 0x08) fill_rect(bm, s, l, bot - t, r, bot);                  // d
  if (seg & 0x10) fill_rect(bm, s, l, mid - t / 2, l + t, bot);          // e
  if (seg & 0x20) fill_rect(bm, s, l, top, l + t, mid + t / 2 + 1);      // f
  if (seg & 0x40) fill_rect(bm, s, l, mid - t / 2, r, mid - t / 2 + t);  // g
  return bm;
}

inline std::vector<float> cross_bitmap(int s) {
  std::vector<float> bm(static_cast<std::size_t>(s) * s, 0.0f);
  const int t = std::max(1, s / 4);
  const int c0 = (s - t) / 2;
  fill_rect(bm, s, c0, 0, c0 + t, s);
  fill_rect(bm, s, 0, c0, s, c0 + t);
  return bm;
}

inline std::vector<float> sprite_bitmap(SpriteStyle style, int s, Rng& rng) {
  switch (style) {
    case SpriteStyle::digit_glyph: return digit_bitmap(static_cast<int>(rng.below(10)), s);
    case SpriteStyle::block: return std::vector<float>(static_cast<std::size_t>(s) * s, 1.0f);
    case SpriteStyle::cross: return cross_bitmap(s);
  }
  return {};
}

// Folds p back into [0, hi], negating v once per wall hit.
inline void reflect_axis(double& p, double& v, double hi) {
  for (int guard = 0; guard < 64 && (p < 0.0 || p > hi); ++guard) {
    if (p < 0.0) {
      p = -p;
      v = -v;
    } else if (p > hi) {
      p = 2.0 * hi - p;
      v = -v;
    }
  }
  p = std::clamp(p, 0.0, hi);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

inline SpriteWorld init_world(const DatasetConfig& cfg, Rng& rng) {
  cfg.validate();
  SpriteWorld w;
  w.height = cfg.height;
  w.width = cfg.width;
  const int s = cfg.sprite_size;
  for (int i = 0; i < cfg.num_sprites; ++i) {
    Sprite sp;
    sp.size = s;
    sp.x = rng.uniform(0.0, static_cast<double>(cfg.width - s));
    sp.y = rng.uniform(0.0, static_cast<double>(cfg.height - s));
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    sp.vx = speed * std::cos(theta);
    sp.vy = speed * std::sin(theta);
    sp.bitmap = detail::sprite_bitmap(cfg.style, s, rng);
    w.sprites.push_back(std::move(sp));
  }
  return w;
}

// Moves every sprite one step: position += velocity, then reflection.
inline void advance(SpriteWorld& w) {
  for (Sprite& sp : w.sprites) {
    sp.x += sp.vx;
    sp.y += sp.vy;
    detail::reflect_axis(sp.x, sp.vx, static_cast<double>(w.width - sp.size));
    detail::reflect_axis(sp.y, sp.vy, static_cast<double>(w.height - sp.size));
  }
}

// Integer placement used for rendering.
inline std::pair<int, int> render_origin(const Sprite& sp) {
  return {static_cast<int>(std::lround(sp.x)), static_cast<int>(std::lround(sp.y))};
}

inline bool inside_canvas(const SpriteWorld& w, const Sprite& sp) {
  const auto [x, y] = render_origin(sp);
  return x >= 0 && y >= 0 && x + sp.size <= w.width && y + sp.size <= w.height;
}

// Composites the world into dst ([J,H,W] slice with J = 1) by per-pixel max.
template <typename S>
void render(const SpriteWorld& w, S* dst) {
  std::fill(dst, dst + static_cast<std::size_t>(w.height) * w.width, S(0));
  for (const Sprite& sp : w.sprites) {
    if (!inside_canvas(w, sp)) throw ContractError("render: sprite outside the canvas");
    const auto [ox, oy] = render_origin(sp);
    for (int y = 0; y < sp.size; ++y)
      for (int x = 0; x < sp.size; ++x) {
        S& px = dst[static_cast<std::size_t>(oy + y) * w.width + (ox + x)];
        px = std::max(px, static_cast<S>(sp.bitmap[static_cast<std::size_t>(y) * sp.size + x]));
      }
  }
}

template <typename S>
TensorT<S> render(const SpriteWorld& w) {
  TensorT<S> f(nchw(1, 1, w.height, w.width));
  render(w, f.ptr());
  return f;
}

// Trajectory of one sequence: worlds[t] is the state rendered as frame t.
struct Trajectory {
  std::vector<SpriteWorld> worlds;
  std::vector<std::array<double, DatasetConfig::kActionDim>> actions;  // empty unless cfg.actions
};

namespace detail {

// Commanded velocity change: each component independently in {-1, 0, +1}
// with probability action_rate of being nonzero.
inline std::array<double, DatasetConfig::kActionDim> draw_action(const DatasetConfig& cfg, Rng& rng) {
  std::array<double, DatasetConfig::kActionDim> a{};
  for (double& c : a) {
    if (rng.bernoulli(cfg.action_rate)) c = rng.bernoulli(0.5) ? 1.0 : -1.0;
  }
  return a;
}

// Applies a command; each component stays within ±speed_max.
inline void apply_action(SpriteWorld& w, const std::array<double, DatasetConfig::kActionDim>& a,
                         const DatasetConfig& cfg) {
  for (Sprite& sp : w.sprites) {
    sp.vx = std::clamp(sp.vx + cfg.action_step * a[0], -cfg.speed_max, cfg.speed_max);
    sp.vy = std::clamp(sp.vy + cfg.action_step * a[1], -cfg.speed_max, cfg.speed_max);
  }
}

}  // namespace detail

inline Trajectory simulate(const DatasetConfig& cfg, Rng& rng) {
  Trajectory tr;
  SpriteWorld w = init_world(cfg, rng);
  tr.worlds.push_back(w);
  for (int t = 1; t < cfg.length; ++t) {
    if (cfg.actions) {
      const auto a = detail::draw_action(cfg, rng);
      detail::apply_action(w, a, cfg);
      tr.actions.push_back(a);
    }
    advance(w);
    tr.worlds.push_back(w);
  }
  // The command after the last frame has no visible effect; keep the
  // action list aligned with the frames.
  if (cfg.actions) tr.actions.push_back(detail::draw_action(cfg, rng));
  return tr;
}

// One sequence as a batch-of-one FrameSequence.
template <typename S = float>
FrameSequenceT<S> gen_sequence(const DatasetConfig& cfg, Rng& rng) {
  const Trajectory tr = simulate(cfg, rng);
  FrameSequenceT<S> seq;
  for (const SpriteWorld& w : tr.worlds) seq.frames.push_back(render<S>(w));
  for (const auto& a : tr.actions) {
    TensorT<S> t(nchw(1, DatasetConfig::kActionDim, 1, 1));
    for (int i = 0; i < DatasetConfig::kActionDim; ++i) t[i] = static_cast<S>(a[i]);
    seq.actions.push_back(std::move(t));
  }
  return seq;
}

// count sequences; sequence i draws from rng.split(i), so any prefix of a
// dataset is independent of the total count.
template <typename S = float>
std::vector<FrameSequenceT<S>> gen_dataset(const DatasetConfig& cfg, std::size_t count, const Rng& rng) {
  std::vector<FrameSequenceT<S>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng r = rng.split(i);
    out.push_back(gen_sequence<S>(cfg, r));
  }
  return out;
}

template <typename S>
std::pair<FrameSequenceT<S>, FrameSequenceT<S>> split_context_target(const FrameSequenceT<S>& seq, int T, int K) {
  if (T < 0 || K < 0) throw ContractError("split_context_target: T and K must be non-negative");
  if (seq.length() < T + K) {
    throw ContractError("split_context_target: sequence has " + std::to_string(seq.length()) + " frames, need " +
                        std::to_string(T + K));
  }
  FrameSequenceT<S> ctx, tgt;
  ctx.frames.assign(seq.frames.begin(), seq.frames.begin() + T);
  tgt.frames.assign(seq.frames.begin() + T, seq.frames.begin() + T + K);
  if (seq.has_actions()) {
    const auto n = static_cast<int>(seq.actions.size());
    ctx.actions.assign(seq.actions.begin(), seq.actions.begin() + std::min(T, n));
    if (n > T) tgt.actions.assign(seq.actions.begin() + T, seq.actions.begin() + std::min(T + K, n));
  }
  return {std::move(ctx), std::move(tgt)};
}

// Concatenates batch-of-one sequences along N.
template <typename S>
FrameSequenceT<S> stack_batch(const std::vector<FrameSequenceT<S>>& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("stack_batch: empty index list");
  const FrameSequenceT<S>& first = data.at(indices[0]);
  const int len = first.length();
  const bool act = first.has_actions();
  FrameSequenceT<S> out;
  auto stack = [&](auto member, int t) {
    const Shape one = (data.at(indices[0]).*member)[t].shape();
    TensorT<S> dst(nchw(static_cast<int>(indices.size()), one.c(), one.h(), one.w()));
    const std::size_t per = one.numel();
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const auto& src = (data.at(indices[b]).*member)[t];
      if (!(src.shape() == one)) throw ShapeError("stack_batch: sequences have different frame shapes");
      std::copy(src.ptr(), src.ptr() + per, dst.ptr() + b * per);
    }
    return dst;
  };
  for (std::size_t idx : indices) {
    const auto& s = data.at(idx);
    if (s.length() != len || s.has_actions() != act || s.actions.size() != first.actions.size()) {
      throw ShapeError("stack_batch: sequences differ in length or action track");
    }
  }
  for (int t = 0; t < len; ++t) out.frames.push_back(stack(&FrameSequenceT<S>::frames, t));
  for (int t = 0; t < static_cast<int>(first.actions.size()); ++t) {
    out.actions.push_back(stack(&FrameSequenceT<S>::actions, t));
  }
  return out;
}

// Sample n of a batch sequence as a batch-of-one sequence.
template <typename S>
FrameSequenceT<S> batch_item(const FrameSequenceT<S>& batch, int n) {
  FrameSequenceT<S> out;
  auto take = [n](const TensorT<S>& t) {
    const Shape s = t.shape();
    TensorT<S> dst(nchw(1, s.c(), s.h(), s.w()));
    const std::size_t per = dst.size();
    std::copy(t.ptr() + n * per, t.ptr() + (n + 1) * per, dst.ptr());
    return dst;
  };
  if (n < 0 || n >= batch.batch()) throw ContractError("batch_item: index out of range");
  for (const auto& f : batch.frames) out.frames.push_back(take(f));
  for (const auto& a : batch.actions) out.actions.push_back(take(a));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset file
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 4 + 4 * 6;

template <typename S>
void save_dataset(const std::string& path, const std::vector<FrameSequenceT<S>>& seqs) {
  if (seqs.empty()) throw ContractError("save_dataset: no sequences");
  const FrameSequenceT<S>& first = seqs.front();
  if (first.length() == 0) throw ContractError("save_dataset: empty sequence");
  const Shape fs = first.frames.front().shape();
  const bool act = first.has_actions();
  const int d_a = act ? first.actions.front().shape().c() : 0;
  for (const auto& s : seqs) {
    if (s.length() != first.length() || s.batch() != 1) {
      throw ShapeError("save_dataset: sequences must be batch-of-one with equal length");
    }
    for (const auto& f : s.frames)
      if (!(f.shape() == fs)) throw ShapeError("save_dataset: frame shapes differ");
    if (s.has_actions() != act || (act && s.actions.size() != static_cast<std::size_t>(s.length()))) {
      throw ShapeError("save_dataset: action tracks must cover every frame of every sequence");
    }
  }
  io::Writer w(path);
  w.magic("STPD");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(seqs.size()));
  w.u32(static_cast<std::uint32_t>(first.length()));
  w.u32(static_cast<std::uint32_t>(fs.c()));
  w.u32(static_cast<std::uint32_t>(fs.h()));
  w.u32(static_cast<std::uint32_t>(fs.w()));
  for (const auto& s : seqs)
    for (const auto& f : s.frames) w.f32_range(f.data().begin(), f.data().end());
  if (act) {
    w.magic("ACTN");
    w.u32(static_cast<std::uint32_t>(d_a));
    for (const auto& s : seqs)
      for (const auto& a : s.actions) w.f32_range(a.data().begin(), a.data().end());
  }
  w.close();
}

template <typename S = float>
std::vector<FrameSequenceT<S>> load_dataset(const std::string& path) {
  io::Reader r(path);
  if (!r.magic("STPD")) throw FormatError("'" + path + "' is not a dataset file (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion) {
    throw FormatError("'" + path + "' has dataset version " + std::to_string(version) + ", expected " +
                      std::to_string(kDatasetVersion));
  }
  const std::uint32_t n = r.u32("sequence count"), len = r.u32("length"), j = r.u32("channels"),
                      h = r.u32("height"), wd = r.u32("width");
  if (len == 0 || j == 0 || h == 0 || wd == 0) throw FormatError("'" + path + "' has a zero extent");
  const std::uint64_t frame = static_cast<std::uint64_t>(j) * h * wd;
  const std::uint64_t need = static_cast<std::uint64_t>(n) * len * frame * 4;
  if (r.remaining() < need) {
    throw FormatError("'" + path + "' is truncated: header promises " + std::to_string(need) + " payload bytes, found " +
                      std::to_string(r.remaining()));
  }
  std::vector<FrameSequenceT<S>> out(n);
  for (auto& s : out) {
    for (std::uint32_t t = 0; t < len; ++t) {
      TensorT<S> f(nchw(1, static_cast<int>(j), static_cast<int>(h), static_cast<int>(wd)));
      r.f32_into(f.ptr(), f.size(), "frames");
      s.frames.push_back(std::move(f));
    }
  }
  if (!r.at_end()) {
    if (!r.magic("ACTN")) throw FormatError("'" + path + "' has trailing bytes that are not an action block");
    const std::uint32_t d_a = r.u32("action dim");
    if (d_a == 0 || r.remaining() < static_cast<std::uint64_t>(n) * len * d_a * 4) {
      throw FormatError("'" + path + "' has a truncated action block");
    }
    for (auto& s : out) {
      for (std::uint32_t t = 0; t < len; ++t) {
        TensorT<S> a(nchw(1, static_cast<int>(d_a), 1, 1));
        r.f32_into(a.ptr(), a.size(), "actions");
        s.actions.push_back(std::move(a));
      }
    }
    if (!r.at_end()) throw FormatError("'" + path + "' has trailing bytes after the action block");
  }
  return out;
}

}  // namespace stpred
