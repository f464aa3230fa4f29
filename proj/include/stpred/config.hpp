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

// Flat `key = value` files. '#' starts a comment; blank lines are skipped.
// Keys are the long CLI flag names without the leading dashes.

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "stpred/errors.hpp"

namespace stpred {

class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& origin = "<config>") {
    KeyValues kv;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t end = std::min(text.find('\n', pos), text.size());
      std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      const std::string key(trim(line.substr(0, eq)));
      const std::string value(trim(line.substr(eq + 1)));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
      if (kv.values_.count(key)) throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
      kv.values_[key] = value;
      kv.order_.push_back(key);
      if (end == text.size()) break;
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }
  const std::vector<std::string>& keys() const { return order_; }

  void set(const std::string& key, const std::string& value) {
    if (key.empty() || key.find_first_of("=#\n") != std::string::npos) throw ConfigError("invalid key '" + key + "'");
    if (value.find_first_of("#\n") != std::string::npos) throw ConfigError("value for '" + key + "' contains '#' or a newline");
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }

  void set(const std::string& key, double value) { set(key, format_real(value)); }
  void set(const std::string& key, std::int64_t value) { set(key, std::to_string(value)); }
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }

  // Entries of `other` replace ours.
  void merge(const KeyValues& other) {
    for (const auto& k : other.order_) set(k, other.values_.at(k));
  }

  // Shortest text that parses back to the same double.
  static std::string format_real(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
  }

  std::string str(const std::string& key) const { return at(key); }

  std::int64_t integer(const std::string& key) const {
    const std::string& v = at(key);
    std::int64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
    return out;
  }

  double real(const std::string& key) const {
    const std::string& v = at(key);
    // from_chars accepts subnormals, which stod reports as out of range.
    const char* first = v.data();
    if (!v.empty() && v[0] == '+') ++first;
    double out = 0.0;
    const auto [p, ec] = std::from_chars(first, v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || first == v.data() + v.size()) {
      throw ConfigError("key '" + key + "': '" + v + "' is not a number");
    }
    return out;
  }

  bool boolean(const std::string& key) const {
    const std::string& v = at(key);
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
  }

  std::string dump() const {
    std::string out;
    for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
    return out;
  }

 private:
  static std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  const std::string& at(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
    return it->second;
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace stpred
