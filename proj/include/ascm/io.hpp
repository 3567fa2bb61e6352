// ascm/io.hpp

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

// Binary files share the magic "ASCM" followed by a format version byte:
//   1  feature matrix: rows u32, cols u32, frame_rate f64, row-major f32 payload
//   2  model container: n_sections u32, then per section
//        name_len u16, name bytes, kind u8 (0 = f64 matrix, 1 = UTF-8 text),
//        matrix: rows u32, cols u32, row-major f64 payload | text: len u32, bytes
// Everything is little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "ascm/audio.hpp"
#include "ascm/common.hpp"
#include "ascm/features.hpp"

namespace ascm {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

inline constexpr char kMagic[4] = {'A', 'S', 'C', 'M'};
inline constexpr std::uint8_t kFeatureVersion = 1;
inline constexpr std::uint8_t kContainerVersion = 2;

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes_.append(buf, sizeof(T));
  }
  void put_bytes(const std::string& s) { bytes_ += s; }
  const std::string& str() const { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string what) : b_(bytes), what_(std::move(what)) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) fail("format", "truncated " + what_);
  }
  const std::string& b_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("io", "cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void check_magic(ByteReader& r, std::uint8_t version, const std::string& what) {
  if (r.get_bytes(4) != std::string(kMagic, 4)) fail("format", what + ": bad magic");
  const auto v = r.get<std::uint8_t>();
  if (v != version)
    fail("format", what + ": unexpected format version " + std::to_string(int(v)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Feature files
// ---------------------------------------------------------------------------

inline std::string encode_features(const FeatureMatrix& f) {
  detail::ByteWriter w;
  w.put_bytes(std::string(kMagic, 4));
  w.put<std::uint8_t>(kFeatureVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.data.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f.data.cols()));
  w.put<double>(f.frame_rate);
  for (Eigen::Index i = 0; i < f.data.rows(); ++i)
    for (Eigen::Index j = 0; j < f.data.cols(); ++j) w.put<float>(static_cast<float>(f.data(i, j)));
  return w.str();
}

inline FeatureMatrix decode_features(const std::string& bytes) {
  detail::ByteReader r(bytes, "feature file");
  detail::check_magic(r, kFeatureVersion, "feature file");
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  FeatureMatrix f;
  f.frame_rate = r.get<double>();
  f.data.resize(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) f.data(i, j) = r.get<float>();
  if (!r.done()) fail("format", "feature file: trailing bytes");
  return f;
}

inline void write_features(const std::filesystem::path& path, const FeatureMatrix& f) {
  detail::write_bytes(path, encode_features(f));
}

inline FeatureMatrix read_features(const std::filesystem::path& path) {
  return decode_features(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// Named-section model container
// ---------------------------------------------------------------------------

class Container {
 public:
  void set(const std::string& name, Matrix m) { matrices_[name] = std::move(m); }
  void set(const std::string& name, const Vector& v) {
    matrices_[name] = Matrix(v.transpose());
  }
  void set_text(const std::string& name, std::string text) { texts_[name] = std::move(text); }
  void set_scalar(const std::string& name, double v) { matrices_[name] = Matrix::Constant(1, 1, v); }

  bool has(const std::string& name) const { return matrices_.count(name) > 0; }
  bool has_text(const std::string& name) const { return texts_.count(name) > 0; }

  const Matrix& matrix(const std::string& name) const {
    auto it = matrices_.find(name);
    if (it == matrices_.end()) fail("format", "container has no section '" + name + "'");
    return it->second;
  }
  Vector vector(const std::string& name) const {
    const Matrix& m = matrix(name);
    return Eigen::Map<const Vector>(m.data(), m.size());
  }
  double scalar(const std::string& name) const {
    const Matrix& m = matrix(name);
    require(m.size() == 1, "format", "section '" + name + "' is not a scalar");
    return m(0, 0);
  }
  const std::string& text(const std::string& name) const {
    auto it = texts_.find(name);
    if (it == texts_.end()) fail("format", "container has no text section '" + name + "'");
    return it->second;
  }

  std::string encode() const {
    detail::ByteWriter w;
    w.put_bytes(std::string(kMagic, 4));
    w.put<std::uint8_t>(kContainerVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(matrices_.size() + texts_.size()));
    for (const auto& [name, m] : matrices_) {
      put_name(w, name);
      w.put<std::uint8_t>(0);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
      w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
      for (Eigen::Index i = 0; i < m.size(); ++i) w.put<double>(m.data()[i]);
    }
    for (const auto& [name, t] : texts_) {
      put_name(w, name);
      w.put<std::uint8_t>(1);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(t.size()));
      w.put_bytes(t);
    }
    return w.str();
  }

  static Container decode(const std::string& bytes) {
    detail::ByteReader r(bytes, "model container");
    detail::check_magic(r, kContainerVersion, "model container");
    Container c;
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t s = 0; s < n; ++s) {
      const auto len = r.get<std::uint16_t>();
      std::string name = r.get_bytes(len);
      const auto kind = r.get<std::uint8_t>();
      if (kind == 0) {
        const auto rows = r.get<std::uint32_t>();
        const auto cols = r.get<std::uint32_t>();
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.get<double>();
        c.matrices_[name] = std::move(m);
      } else if (kind == 1) {
        const auto tl = r.get<std::uint32_t>();
        c.texts_[name] = r.get_bytes(tl);
      } else {
        fail("format", "model container: unknown section kind " + std::to_string(int(kind)));
      }
    }
    if (!r.done()) fail("format", "model container: trailing bytes");
    return c;
  }

  void save(const std::filesystem::path& path) const { detail::write_bytes(path, encode()); }
  static Container load(const std::filesystem::path& path) {
    return decode(read_file_bytes(path));
  }

 private:
  static void put_name(detail::ByteWriter& w, const std::string& name) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
  }
  std::map<std::string, Matrix> matrices_;
  std::map<std::string, std::string> texts_;
};

inline std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(sep);
    out += parts[i];
  }
  return out;
}

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) fail("format", where + ": bad number '" + s + "'");
  return v;
}

}  // namespace ascm
