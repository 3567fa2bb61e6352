// ascm/config.hpp

// Copyright 2026 The ASCM Authors
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

// Flat key-value configuration text:
//
//   # comment
//   seed = 7
//   [ubm]
//   components = 64          # read as "ubm.components"
//   mfcc.static_window_ms = 20
//
// Section headers prefix the keys that follow them; dotted keys may also be
// written out in full. Values may be double-quoted.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ascm/audio.hpp"
#include "ascm/common.hpp"

namespace ascm {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text) {
    KeyValueConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      bool quoted = false;
      for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) {
          line.resize(i);
          break;
        }
      }
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') fail("config", "config line " + std::to_string(line_no) + ": bad section");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        fail("config", "config line " + std::to_string(line_no) + ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
        value = value.substr(1, value.size() - 2);
      if (!section.empty()) key = section + '.' + key;
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path) {
    auto c = parse(read_file_bytes(path));
    c.base_dir_ = path.parent_path();
    return c;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::filesystem::path& base_dir() const { return base_dir_; }

  std::string get(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get(const std::string& key, double fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    const std::string v = get(key, std::string());
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size()) fail("config", key + ": expected a number, got '" + v + "'");
    return d;
  }

  int get(const std::string& key, int fallback) const {
    const double d = get(key, static_cast<double>(fallback));
    if (d != std::floor(d)) fail("config", key + ": expected an integer");
    return static_cast<int>(d);
  }

  std::uint64_t get(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    const std::string v = get(key, std::string());
    try {
      if (v.empty() || v.front() == '-' || v.front() == '+') throw std::invalid_argument("sign");
      std::size_t used = 0;
      const auto r = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing");
      return r;
    } catch (const std::exception&) {
      fail("config", key + ": expected an unsigned integer, got '" + v + "'");
    }
  }

  bool get(const std::string& key, bool fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    const std::string v = get(key, std::string());
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail("config", key + ": expected a boolean, got '" + v + "'");
  }

  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    std::vector<std::string> out;
    for (auto& part : split(get(key, std::string()), ','))
      if (auto t = trim(part); !t.empty()) out.push_back(t);
    return out;
  }

  // Keys present in the file that no getter asked for.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
  std::filesystem::path base_dir_;
};

}  // namespace ascm
