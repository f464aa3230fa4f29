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
#include <filesystem>
#include <fstream>

#include "test_util.hpp"

namespace stpred {
namespace {

SpriteWorld world_with(int h, int w, Sprite sp) {
  SpriteWorld world;
  world.height = h;
  world.width = w;
  world.sprites.push_back(std::move(sp));
  return world;
}

Sprite block(int s, double x, double y, double vx, double vy, float value = 1.0f) {
  Sprite sp;
  sp.size = s;
  sp.x = x;
  sp.y = y;
  sp.vx = vx;
  sp.vy = vy;
  sp.bitmap.assign(static_cast<std::size_t>(s) * s, value);
  return sp;
}

TEST(Physics, FreeFlight) {
  auto w = world_with(32, 32, block(4, 14, 14, 1, 0));
  for (int k = 0; k < 3; ++k) advance(w);
  EXPECT_EQ(w.sprites[0].x, 17.0);
  EXPECT_EQ(w.sprites[0].y, 14.0);
  EXPECT_EQ(w.sprites[0].vx, 1.0);
}

TEST(Physics, MirrorReflection) {
  const int W = 32, s = 4;
  auto w = world_with(32, W, block(s, W - s - 1, 10, 2, 0));
  advance(w);
  EXPECT_EQ(w.sprites[0].x, W - s - 1);
  EXPECT_EQ(w.sprites[0].vx, -2.0);

  auto left = world_with(32, W, block(s, 1, 10, -3, 0));
  advance(left);
  EXPECT_EQ(left.sprites[0].x, 2.0);
  EXPECT_EQ(left.sprites[0].vx, 3.0);

  // Landing exactly on the wall is not a crossing.
  auto touch = world_with(32, W, block(s, W - s - 2, 10, 2, 0));
  advance(touch);
  EXPECT_EQ(touch.sprites[0].x, W - s);
  EXPECT_EQ(touch.sprites[0].vx, 2.0);
}

TEST(Physics, CornerReflectsBothAxes) {
  auto w = world_with(16, 16, block(4, 11, 11, 2, 2));
  advance(w);
  EXPECT_EQ(w.sprites[0].x, 11.0);
  EXPECT_EQ(w.sprites[0].y, 11.0);
  EXPECT_EQ(w.sprites[0].vx, -2.0);
  EXPECT_EQ(w.sprites[0].vy, -2.0);
}

TEST(Render, MaxCompositing) {
  SpriteWorld w = world_with(8, 8, block(3, 1, 1, 0, 0, 0.3f));
  w.sprites.push_back(block(3, 2, 2, 0, 0, 0.9f));
  const auto f = render<float>(w);
  EXPECT_EQ(f.at(0, 0, 1, 1), 0.3f);
  EXPECT_EQ(f.at(0, 0, 3, 3), 0.9f);  // overlap
  EXPECT_EQ(f.at(0, 0, 4, 4), 0.9f);
  EXPECT_EQ(f.at(0, 0, 0, 0), 0.0f);
  EXPECT_EQ(f.at(0, 0, 5, 5), 0.0f);
}

TEST(Render, NearestIntegerPlacement) {
  auto w = world_with(8, 8, block(2, 2.4, 3.6, 0, 0));
  const auto f = render<float>(w);
  EXPECT_EQ(f.at(0, 0, 4, 2), 1.0f);
  EXPECT_EQ(f.at(0, 0, 5, 3), 1.0f);
  EXPECT_EQ(f.at(0, 0, 3, 2), 0.0f);
  double total = 0;
  for (float v : f.data()) total += v;
  EXPECT_EQ(total, 4.0);
}

TEST(GenSequence, SpeedConservedAndContained) {
  DatasetConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.sprite_size = 8;
  cfg.speed_min = 1.0;
  cfg.speed_max = 5.0;
  cfg.length = 40;
  Rng root(1);
  double drift = 0.0;
  int outside = 0;
  for (int i = 0; i < 300; ++i) {
    Rng r = root.split(i);
    const Trajectory tr = simulate(cfg, r);
    for (std::size_t s = 0; s < tr.worlds[0].sprites.size(); ++s) {
      const double v0 = std::hypot(tr.worlds[0].sprites[s].vx, tr.worlds[0].sprites[s].vy);
      EXPECT_GE(v0, cfg.speed_min);
      EXPECT_LE(v0, cfg.speed_max);
      for (const auto& w : tr.worlds) {
        drift = std::max(drift, std::abs(std::hypot(w.sprites[s].vx, w.sprites[s].vy) - v0));
        outside += !inside_canvas(w, w.sprites[s]);
        EXPECT_GE(w.sprites[s].x, 0.0);
        EXPECT_LE(w.sprites[s].x, cfg.width - cfg.sprite_size);
      }
    }
  }
  EXPECT_LE(drift, 1e-6);
  EXPECT_EQ(outside, 0);
}

TEST(GenSequence, FramesInUnitRangeAndShaped) {
  for (SpriteStyle style : {SpriteStyle::digit_glyph, SpriteStyle::block, SpriteStyle::cross}) {
    DatasetConfig cfg;
    cfg.height = 24;
    cfg.width = 32;
    cfg.sprite_size = 8;
    cfg.length = 5;
    cfg.style = style;
    Rng r(2);
    auto seq = gen_sequence(cfg, r);
    ASSERT_EQ(seq.length(), 5);
    EXPECT_FALSE(seq.has_actions());
    for (const auto& f : seq.frames) {
      EXPECT_EQ(f.shape(), nchw(1, 1, 24, 32));
      for (float v : f.data()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
      }
      EXPECT_GT(f.max_abs(), 0.0f);
    }
  }
}

TEST(GenSequence, SeedDeterminismAndPrefixStability) {
  DatasetConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.sprite_size = 8;
  const auto a = gen_dataset(cfg, 5, Rng(3));
  const auto b = gen_dataset(cfg, 8, Rng(3));
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a[i].frames, b[i].frames);
  EXPECT_NE(a[0].frames, a[1].frames);
}

TEST(GenSequence, InitialPositionsCoverQuadrants) {
  DatasetConfig cfg;
  cfg.num_sprites = 1;
  cfg.height = cfg.width = 64;
  cfg.sprite_size = 16;
  std::array<int, 4> counts{};
  const double mid = (64 - 16) / 2.0;
  for (int seed = 0; seed < 1000; ++seed) {
    Rng r(seed);
    const auto w = init_world(cfg, r);
    counts[(w.sprites[0].x >= mid) + 2 * (w.sprites[0].y >= mid)]++;
  }
  // chi-square with 3 degrees of freedom, 0.999 quantile 16.27
  double chi2 = 0;
  for (int c : counts) chi2 += (c - 250.0) * (c - 250.0) / 250.0;
  EXPECT_LT(chi2, 16.27);
}

TEST(GenSequence, ActionTask) {
  DatasetConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.sprite_size = 8;
  cfg.length = 12;
  cfg.actions = true;
  cfg.action_rate = 1.0;
  Rng r(4);
  const Trajectory tr = simulate(cfg, r);
  ASSERT_EQ(tr.actions.size(), 12u);
  for (int t = 0; t + 1 < 12; ++t) {
    for (std::size_t s = 0; s < tr.worlds[t].sprites.size(); ++s) {
      const Sprite& before = tr.worlds[t].sprites[s];
      const Sprite& after = tr.worlds[t + 1].sprites[s];
      // |v| after the command equals the clamped commanded velocity (reflection keeps magnitude).
      const double vx = std::clamp(before.vx + tr.actions[t][0], -cfg.speed_max, cfg.speed_max);
      const double vy = std::clamp(before.vy + tr.actions[t][1], -cfg.speed_max, cfg.speed_max);
      EXPECT_NEAR(std::abs(after.vx), std::abs(vx), 1e-12);
      EXPECT_NEAR(std::abs(after.vy), std::abs(vy), 1e-12);
    }
    for (double a : tr.actions[t]) EXPECT_TRUE(a == 1.0 || a == -1.0);
  }
  Rng r2(4);
  auto seq = gen_sequence(cfg, r2);
  ASSERT_EQ(seq.actions.size(), 12u);
  EXPECT_EQ(seq.actions[0].shape(), nchw(1, 2, 1, 1));
  EXPECT_EQ(seq.actions[3][1], static_cast<float>(tr.actions[3][1]));
}

TEST(DatasetConfig, Validation) {
  DatasetConfig c;
  c.sprite_size = 100;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DatasetConfig{};
  c.speed_min = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DatasetConfig{};
  c.speed_min = 5;
  c.speed_max = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_sprite_style("mnist"), ConfigError);
}

TEST(SplitContextTarget, Protocols) {
  DatasetConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.sprite_size = 4;
  cfg.length = 20;
  Rng r(5);
  auto seq = gen_sequence(cfg, r);
  auto [c10, t10] = split_context_target(seq, 10, 10);
  EXPECT_EQ(c10.length(), 10);
  EXPECT_EQ(t10.length(), 10);
  EXPECT_EQ(t10.frames[0], seq.frames[10]);
  auto [c2, t2] = split_context_target(seq, 2, 10);
  EXPECT_EQ(c2.length(), 2);
  EXPECT_EQ(t2.length(), 10);
  EXPECT_EQ(t2.frames[9], seq.frames[11]);
  auto [c5, t0] = split_context_target(seq, 5, 0);
  EXPECT_EQ(c5.length(), 5);
  EXPECT_EQ(t0.length(), 0);
  EXPECT_THROW(split_context_target(seq, 15, 6), ContractError);
}

TEST(StackBatch, RoundTripsThroughBatchItem) {
  DatasetConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.sprite_size = 4;
  cfg.length = 4;
  cfg.actions = true;
  auto data = gen_dataset(cfg, 4, Rng(6));
  std::vector<std::size_t> idx{2, 0, 3};
  auto batch = stack_batch(data, idx);
  EXPECT_EQ(batch.batch(), 3);
  for (int n = 0; n < 3; ++n) {
    auto one = batch_item(batch, n);
    EXPECT_EQ(one.frames, data[idx[n]].frames);
    EXPECT_EQ(one.actions, data[idx[n]].actions);
  }
}

class DatasetFile : public ::testing::Test {
 protected:
  testing::TempDir dir{"dataset"};
  DatasetConfig cfg = [] {
    DatasetConfig c;
    c.height = 16;
    c.width = 12;
    c.sprite_size = 4;
    c.length = 6;
    return c;
  }();
};

TEST_F(DatasetFile, ExactRoundTripAndSize) {
  auto data = gen_dataset(cfg, 10, Rng(7));
  const auto path = dir.file("d.stpd");
  save_dataset(path, data);
  EXPECT_EQ(std::filesystem::file_size(path), kDatasetHeaderBytes + 10u * 6 * 1 * 16 * 12 * 4);
  auto back = load_dataset(path);
  ASSERT_EQ(back.size(), 10u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(back[i].frames, data[i].frames);
  // Arbitrary float payloads survive bit for bit.
  Rng r(8);
  FrameSequence noisy;
  for (int t = 0; t < 3; ++t) noisy.frames.push_back(testing::random_tensor(nchw(1, 2, 3, 3), r, -1e6, 1e6));
  save_dataset(path, std::vector<FrameSequence>{noisy});
  EXPECT_EQ(load_dataset(path)[0].frames, noisy.frames);
}

TEST_F(DatasetFile, ActionTrailerRoundTrip) {
  cfg.actions = true;
  auto data = gen_dataset(cfg, 3, Rng(9));
  const auto path = dir.file("a.stpd");
  save_dataset(path, data);
  EXPECT_EQ(std::filesystem::file_size(path), kDatasetHeaderBytes + 3u * 6 * 16 * 12 * 4 + 4 + 4 + 3u * 6 * 2 * 4);
  auto back = load_dataset(path);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(back[i].actions, data[i].actions);
}

TEST_F(DatasetFile, CorruptFilesAreFormatErrors) {
  auto data = gen_dataset(cfg, 2, Rng(10));
  const auto path = dir.file("c.stpd");
  save_dataset(path, data);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 7);
  EXPECT_THROW(load_dataset(path), FormatError);
  std::filesystem::resize_file(path, 10);
  EXPECT_THROW(load_dataset(path), FormatError);
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE0000000000000000000000000000";
  }
  EXPECT_THROW(load_dataset(path), FormatError);
  save_dataset(path, data);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    const char v[4] = {9, 0, 0, 0};
    f.write(v, 4);
  }
  EXPECT_THROW(load_dataset(path), FormatError);
  EXPECT_THROW(load_dataset(dir.file("missing.stpd")), IoError);
}

}  // namespace
}  // namespace stpred
