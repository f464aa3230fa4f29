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
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "stpred/errors.hpp"

namespace stpred {

// Up to four positive extents. Rank-4 shapes are read as [N, C, H, W].
class Shape {
 public:
  static constexpr int kMaxRank = 4;

  Shape() = default;

  Shape(std::initializer_list<int> dims) : Shape(std::span<const int>(dims.begin(), dims.size())) {}

  explicit Shape(std::span<const int> dims) {
    if (dims.empty() || dims.size() > kMaxRank) {
      throw ShapeError("shape rank must be in [1, 4], got " + std::to_string(dims.size()));
    }
    rank_ = static_cast<int>(dims.size());
    for (int i = 0; i < rank_; ++i) {
      if (dims[i] < 1) throw ShapeError("shape extents must be >= 1");
      dims_[i] = dims[i];
    }
  }

  int rank() const { return rank_; }
  int operator[](int i) const { return dims_[i]; }

  std::size_t numel() const {
    std::size_t n = rank_ == 0 ? 0 : 1;
    for (int i = 0; i < rank_; ++i) n *= static_cast<std::size_t>(dims_[i]);
    return n;
  }

  std::span<const int> dims() const { return {dims_.data(), static_cast<std::size_t>(rank_)}; }

  // NCHW accessors; only meaningful for rank 4.
  int n() const { return dims_[0]; }
  int c() const { return dims_[1]; }
  int h() const { return dims_[2]; }
  int w() const { return dims_[3]; }
  std::size_t plane() const { return static_cast<std::size_t>(dims_[2]) * dims_[3]; }

  bool operator==(const Shape& o) const {
    return rank_ == o.rank_ && std::equal(dims_.begin(), dims_.begin() + rank_, o.dims_.begin());
  }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (int i = 0; i < rank_; ++i) os << (i ? "x" : "") << dims_[i];
    os << ']';
    return os.str();
  }

 private:
  std::array<int, kMaxRank> dims_{};
  int rank_ = 0;
};

inline Shape nchw(int n, int c, int h, int w) { return Shape{n, c, h, w}; }

inline void require_rank4(const Shape& s, const char* what) {
  if (s.rank() != 4) throw ShapeError(std::string(what) + ": expected rank-4 NCHW tensor, got " + s.str());
}

inline void require_same(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// Cache-line aligned storage. Vectorised kernels peel a scalar head up to the
// first aligned element, so a fixed base alignment keeps results independent
// of where a buffer happens to land.
template <typename S>
struct AlignedAllocator {
  using value_type = S;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  S* allocate(std::size_t n) { return static_cast<S*>(::operator new(n * sizeof(S), kAlign)); }
  void deallocate(S* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

// Dense row-major tensor. Values only; gradients live on the tape and on
// Parameter objects.
template <typename S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;

  explicit TensorT(Shape shape, S fill = S(0)) : shape_(shape), values_(shape.numel(), fill) {}

  TensorT(Shape shape, const std::vector<S>& values) : shape_(shape), values_(values.begin(), values.end()) {
    if (values_.size() != shape_.numel()) {
      throw ShapeError("tensor payload has " + std::to_string(values_.size()) + " values, shape " +
                       shape_.str() + " needs " + std::to_string(shape_.numel()));
    }
  }

  static TensorT zeros(Shape s) { return TensorT(s, S(0)); }
  static TensorT ones(Shape s) { return TensorT(s, S(1)); }
  static TensorT full(Shape s, S v) { return TensorT(s, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<S> data() { return values_; }
  std::span<const S> data() const { return values_; }
  S* ptr() { return values_.data(); }
  const S* ptr() const { return values_.data(); }

  S& operator[](std::size_t i) { return values_[i]; }
  S operator[](std::size_t i) const { return values_[i]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c() + c) * shape_.h() + h) * shape_.w() + w;
  }
  S& at(int n, int c, int h, int w) { return values_[offset(n, c, h, w)]; }
  S at(int n, int c, int h, int w) const { return values_[offset(n, c, h, w)]; }

  void fill(S v) { std::fill(values_.begin(), values_.end(), v); }

  TensorT& operator+=(const TensorT& o) {
    require_same(shape_, o.shape_, "tensor +=");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
  }

  TensorT& operator*=(S s) {
    for (auto& v : values_) v *= s;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](S v) { return std::isfinite(v); });
  }

  S sum() const { return std::accumulate(values_.begin(), values_.end(), S(0)); }

  S max_abs() const {
    S m = 0;
    for (S v : values_) m = std::max(m, std::abs(v));
    return m;
  }

  template <typename U>
  TensorT<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return TensorT<U>(shape_, std::move(out));
  }

  bool operator==(const TensorT& o) const { return shape_ == o.shape_ && values_ == o.values_; }

 private:
  Shape shape_;
  std::vector<S, AlignedAllocator<S>> values_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace stpred
