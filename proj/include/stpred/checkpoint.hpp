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

// Checkpoint file ("STPC", little-endian):
//
//   magic[4] u32 version
//   u32 n + n bytes   config block, `key = value` text
//   u32 count         named tensors, then per tensor:
//     u32 n + n bytes name   u32 rank   u32 dims[rank]   f32 payload
//
// Model parameters use their own names; Adam moments are stored as
// "adam.m/<name>" and "adam.v/<name>". The config block carries the network
// layout, the training configuration, the iteration and the Adam step.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stpred/binary_io.hpp"
#include "stpred/config.hpp"
#include "stpred/errors.hpp"
#include "stpred/network.hpp"
#include "stpred/optim.hpp"

namespace stpred {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_network_keys(KeyValues& kv, const NetworkConfig& c) {
  kv.set("variant", to_string(c.variant));
  kv.set("layers", c.layers);
  kv.set("channels", c.channels);
  kv.set("kernel", c.kernel);
  kv.set("patch", c.patch);
  kv.set("in-channels", c.in_channels);
  kv.set("height", c.height);
  kv.set("width", c.width);
  kv.set("action-dim", c.action_dim);
}

inline NetworkConfig read_network_keys(const KeyValues& kv) {
  NetworkConfig c;
  c.variant = parse_variant(kv.str("variant"));
  c.layers = static_cast<int>(kv.integer("layers"));
  c.channels = static_cast<int>(kv.integer("channels"));
  c.kernel = static_cast<int>(kv.integer("kernel"));
  c.patch = static_cast<int>(kv.integer("patch"));
  c.in_channels = static_cast<int>(kv.integer("in-channels"));
  c.height = static_cast<int>(kv.integer("height"));
  c.width = static_cast<int>(kv.integer("width"));
  c.action_dim = static_cast<int>(kv.integer("action-dim"));
  c.validate();
  return c;
}

template <typename S>
struct CheckpointT {
  KeyValues config;  // everything except the network layout keys is opaque here
  ModelT<S> model;
  std::optional<AdamStateT<S>> adam;
  std::int64_t iteration = 0;
};

using Checkpoint = CheckpointT<float>;

namespace detail {

template <typename S>
void write_tensor(io::Writer& w, const std::string& name, const TensorT<S>& t) {
  w.string(name);
  const auto dims = t.shape().dims();
  w.u32(static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) w.u32(static_cast<std::uint32_t>(d));
  w.f32_range(t.data().begin(), t.data().end());
}

}  // namespace detail

// `extra` is merged into the config block after the network keys.
template <typename S>
void save_checkpoint(const std::string& path, const ModelT<S>& model, const AdamStateT<S>* adam,
                     std::int64_t iteration, const KeyValues& extra = {}) {
  KeyValues kv = extra;
  write_network_keys(kv, model.config);
  kv.set("decouple", model.w_decouple.has_value());
  kv.set("iteration", iteration);
  kv.set("adam", adam != nullptr);
  const auto params = model.parameters();
  if (adam) {
    kv.set("adam-lr", adam->lr);
    kv.set("adam-beta1", adam->beta1);
    kv.set("adam-beta2", adam->beta2);
    kv.set("adam-eps", adam->eps);
    kv.set("adam-step", adam->step);
    kv.set("adam-moments", !adam->m.empty());
    if (!adam->m.empty() && (adam->m.size() != params.size() || adam->v.size() != params.size())) {
      throw ContractError("save_checkpoint: optimizer state does not match the model parameters");
    }
  }

  io::Writer w(path);
  w.magic("STPC");
  w.u32(kCheckpointVersion);
  w.string(kv.dump());
  const bool moments = adam && !adam->m.empty();
  w.u32(static_cast<std::uint32_t>(params.size() * (moments ? 3 : 1)));
  for (const ParameterT<S>* p : params) detail::write_tensor(w, p->name, p->value);
  if (moments) {
    for (std::size_t i = 0; i < params.size(); ++i) detail::write_tensor(w, "adam.m/" + params[i]->name, adam->m[i]);
    for (std::size_t i = 0; i < params.size(); ++i) detail::write_tensor(w, "adam.v/" + params[i]->name, adam->v[i]);
  }
  w.close();
}

template <typename S = float>
CheckpointT<S> load_checkpoint(const std::string& path) {
  io::Reader r(path);
  if (!r.magic("STPC")) throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("'" + path + "' has checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  CheckpointT<S> ck;
  ck.config = KeyValues::parse(r.string("config block"), path + " (config block)");
  const NetworkConfig net = read_network_keys(ck.config);
  ck.iteration = ck.config.integer("iteration");

  std::map<std::string, TensorT<S>> tensors;
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.string("tensor name", 4096);
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank < 1 || rank > 4) throw FormatError("'" + path + "': tensor '" + name + "' has rank " + std::to_string(rank));
    std::vector<int> dims(rank);
    for (auto& d : dims) {
      d = static_cast<int>(r.u32("tensor dims"));
      if (d < 1) throw FormatError("'" + path + "': tensor '" + name + "' has a zero extent");
    }
    TensorT<S> t{Shape(std::span<const int>(dims))};
    if (r.remaining() < t.size() * 4) throw FormatError("'" + path + "' is truncated in tensor '" + name + "'");
    r.f32_into(t.ptr(), t.size(), "tensor payload");
    if (!tensors.emplace(std::move(name), std::move(t)).second) throw FormatError("'" + path + "': duplicate tensor");
  }
  if (!r.at_end()) throw FormatError("'" + path + "' has trailing bytes");

  Rng rng(0);
  ck.model = init_model<S>(net, rng);
  if (!ck.config.boolean("decouple")) ck.model.w_decouple.reset();
  auto take = [&](const std::string& name, const Shape& shape) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("'" + path + "' is missing tensor '" + name + "'");
    if (!(it->second.shape() == shape)) {
      throw FormatError("'" + path + "': tensor '" + name + "' has shape " + it->second.shape().str() + ", expected " +
                        shape.str());
    }
    TensorT<S> t = std::move(it->second);
    tensors.erase(it);
    return t;
  };
  const auto params = ck.model.parameters();
  for (ParameterT<S>* p : params) {
    p->value = take(p->name, p->value.shape());
    p->grad = TensorT<S>(p->value.shape());
  }
  if (ck.config.boolean("adam")) {
    AdamStateT<S> a;
    a.lr = ck.config.real("adam-lr");
    a.beta1 = ck.config.real("adam-beta1");
    a.beta2 = ck.config.real("adam-beta2");
    a.eps = ck.config.real("adam-eps");
    a.step = ck.config.integer("adam-step");
    if (ck.config.boolean("adam-moments")) {
      for (ParameterT<S>* p : params) a.m.push_back(take("adam.m/" + p->name, p->value.shape()));
      for (ParameterT<S>* p : params) a.v.push_back(take("adam.v/" + p->name, p->value.shape()));
    }
    ck.adam = std::move(a);
  }
  if (!tensors.empty()) throw FormatError("'" + path + "' has unexpected tensor '" + tensors.begin()->first + "'");
  return ck;
}

}  // namespace stpred
