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

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stpred/errors.hpp"
#include "stpred/tensor.hpp"

namespace stpred {

// A trainable tensor. grad accumulates across backward passes until
// zero_grad() is called.
template <typename S>
struct ParameterT {
  std::string name;
  TensorT<S> value;
  TensorT<S> grad;

  ParameterT() = default;
  ParameterT(std::string n, TensorT<S> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() == value.shape()) {
      grad.fill(S(0));
    } else {
      grad = TensorT<S>(value.shape());
    }
  }
  std::size_t numel() const { return value.size(); }
};

using Parameter = ParameterT<float>;

template <typename S>
class TapeT;

// Handle to a value recorded on a tape.
template <typename S>
class VarT {
 public:
  VarT() = default;
  VarT(TapeT<S>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  TapeT<S>& tape() const { return *tape_; }
  const TensorT<S>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }

 private:
  TapeT<S>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Define-by-run reverse-mode tape. Operations are appended in execution order,
// so node ids are already a topological order and backward() is one reverse
// sweep. A tape is owned by exactly one forward/backward pass.
template <typename S>
class TapeT {
 public:
  using Var = VarT<S>;
  using Tensor = TensorT<S>;
  // Receives the gradient flowing into the node's output.
  using BackwardFn = std::function<void(TapeT&, const Tensor&)>;

  explicit TapeT(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  // A leaf whose gradient is kept on the tape (read back with grad()).
  Var leaf(Tensor value) { return push(std::move(value), grad_enabled_, nullptr); }

  // Binds a parameter; its gradient is added into p.grad by backward().
  // Repeated binds of the same parameter return the same node. Parameters
  // must outlive the tape.
  Var param(ParameterT<S>& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) {
      // A different shape at a known address means the parameter died and
      // another one took its place while the tape was alive.
      if (!(nodes_[it->second].value.shape() == p.value.shape())) {
        throw ContractError("tape: parameter '" + p.name + "' does not outlive the tape it was bound to");
      }
      return Var(this, it->second);
    }
    Var v = push(p.value, grad_enabled_, nullptr);
    nodes_[v.id()].param = &p;
    bound_.emplace(&p, v.id());
    return v;
  }

  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  // Records an op output. The backward rule is dropped when no input needs a
  // gradient or when recording is disabled.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& in : inputs) {
        check_owner(in);
        needs = needs || nodes_[in.id()].requires_grad;
      }
    }
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor& value(const Var& v) const {
    check_owner(v);
    return nodes_[v.id()].value;
  }

  // Gradient of the last backward() loss w.r.t. v; zeros if v was unreached.
  Tensor grad(const Var& v) const {
    check_owner(v);
    const Node& n = nodes_[v.id()];
    if (n.grad.empty()) return Tensor(n.value.shape());
    return n.grad;
  }

  // Used by backward rules: accumulate g into the gradient of input v.
  void accumulate(const Var& v, const Tensor& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Mutable gradient buffer for input v, allocated as zeros on first use.
  // Returns nullptr when v does not need a gradient.
  Tensor* grad_buffer(const Var& v) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return &n.grad;
  }

  bool needs_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  void backward(const Var& loss) {
    check_owner(loss);
    if (!grad_enabled_) throw ContractError("backward on a tape recorded without gradients");
    if (nodes_[loss.id()].value.size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + nodes_[loss.id()].value.shape().str());
    }
    for (Node& n : nodes_) n.grad = Tensor();
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad = Tensor(nodes_[loss.id()].value.shape(), S(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) {
        // The rule may append to other nodes' grads but never to node i.
        Tensor g = std::move(n.grad);
        n.backward(*this, g);
        n.grad = std::move(g);
      }
      if (n.param != nullptr) {
        if (!(n.param->grad.shape() == n.param->value.shape())) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    ParameterT<S>* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(backward), nullptr, requires_grad});
    return Var(this, nodes_.size() - 1);
  }

  void check_owner(const Var& v) const {
    if (&v.tape() != this || v.id() >= nodes_.size()) throw ContractError("variable does not belong to this tape");
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const ParameterT<S>*, std::size_t> bound_;
};

using Tape = TapeT<float>;
using Var = VarT<float>;

}  // namespace stpred
