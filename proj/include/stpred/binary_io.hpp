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

// Little-endian primitives for the dataset and checkpoint files.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "stpred/errors.hpp"

namespace stpred::io {

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
  }

  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed on '" + path_ + "'");
  }
  void magic(const char (&m)[5]) { bytes(m, 4); }
  void u32(std::uint32_t v) {
    std::array<unsigned char, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b.data(), 4);
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void string(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  template <typename It>
  void f32_range(It first, It last) {
    std::vector<unsigned char> buf;
    for (; first != last; ++first) {
      const std::uint32_t v = std::bit_cast<std::uint32_t>(static_cast<float>(*first));
      for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    bytes(buf.data(), buf.size());
  }
  void close() {
    out_.close();
    if (!out_) throw IoError("closing '" + path_ + "' failed");
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open '" + path + "'");
  }

  void bytes(void* p, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError("'" + path_ + "' is truncated while reading " + what);
    }
  }
  bool magic(const char (&m)[5]) {
    char got[4];
    bytes(got, 4, "magic");
    return std::memcmp(got, m, 4) == 0;
  }
  std::uint32_t u32(const char* what) {
    std::array<unsigned char, 4> b{};
    bytes(b.data(), 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    const std::uint64_t lo = u32(what);
    return lo | (static_cast<std::uint64_t>(u32(what)) << 32);
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string string(const char* what, std::uint32_t max_len = 1u << 20) {
    const std::uint32_t n = u32(what);
    if (n > max_len) throw FormatError("'" + path_ + "': implausible length for " + what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  template <typename S>
  void f32_into(S* dst, std::size_t n, const char* what) {
    std::vector<unsigned char> buf(n * 4);
    bytes(buf.data(), buf.size(), what);
    for (std::size_t k = 0; k < n; ++k) {
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[4 * k + i]) << (8 * i);
      dst[k] = static_cast<S>(std::bit_cast<float>(v));
    }
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  // Bytes left from the current position.
  std::uint64_t remaining() {
    const auto here = in_.tellg();
    in_.seekg(0, std::ios::end);
    const auto end = in_.tellg();
    in_.seekg(here);
    return static_cast<std::uint64_t>(end - here);
  }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
};

}  // namespace stpred::io
