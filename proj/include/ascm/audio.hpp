// ascm/audio.hpp

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

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ascm/common.hpp"

namespace ascm {

using Samples = std::vector<double>;

struct StereoClip {
  Samples left;
  Samples right;
  int sample_rate = 0;
  std::string id;

  std::size_t size() const { return left.size(); }

  void validate() const {
    require(left.size() == right.size(), "shape", "stereo channels differ in length");
    require(sample_rate > 0, "value", "sample rate must be positive");
    for (std::size_t i = 0; i < left.size(); ++i)
      require(std::isfinite(left[i]) && std::isfinite(right[i]), "value",
              "non-finite sample in clip '" + id + "'");
  }
};

enum class Source { kLeft = 0, kRight = 1, kMean = 2, kDiff = 3 };

inline constexpr Source kAllSources[] = {Source::kLeft, Source::kRight, Source::kMean,
                                         Source::kDiff};

inline std::string source_name(Source s) {
  switch (s) {
    case Source::kLeft: return "left";
    case Source::kRight: return "right";
    case Source::kMean: return "mean";
    case Source::kDiff: return "diff";
  }
  return "?";
}

inline Source parse_source(const std::string& s) {
  if (s == "left") return Source::kLeft;
  if (s == "right") return Source::kRight;
  if (s == "mean") return Source::kMean;
  if (s == "diff") return Source::kDiff;
  fail("value", "unknown audio source '" + s + "'");
}

// The four mono views of a stereo clip. mean + diff == left and
// mean - diff == right.
struct SourceSet {
  Samples left, right, mean, diff;
  int sample_rate = 0;

  const Samples& get(Source s) const {
    switch (s) {
      case Source::kLeft: return left;
      case Source::kRight: return right;
      case Source::kMean: return mean;
      case Source::kDiff: return diff;
    }
    return mean;
  }
};

inline SourceSet derive_sources(const StereoClip& clip) {
  clip.validate();
  SourceSet out;
  out.sample_rate = clip.sample_rate;
  out.left = clip.left;
  out.right = clip.right;
  const std::size_t n = clip.size();
  out.mean.resize(n);
  out.diff.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.mean[i] = 0.5 * (clip.left[i] + clip.right[i]);
    out.diff[i] = 0.5 * (clip.left[i] - clip.right[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_u16le(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}
inline void put_u32le(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u16le(std::string& s, std::uint16_t v) {
  s.push_back(char(v & 0xff));
  s.push_back(char(v >> 8));
}

}  // namespace detail

// Decodes a RIFF/WAVE byte buffer. Supports PCM 16/24-bit and IEEE float
// 32-bit, mono or stereo, including WAVE_FORMAT_EXTENSIBLE wrappers.
inline StereoClip decode_wav(const std::string& bytes, std::string id = {}) {
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  if (n < 12 || std::memcmp(b, "RIFF", 4) != 0 || std::memcmp(b + 8, "WAVE", 4) != 0)
    fail("format", "malformed WAV: missing RIFF/WAVE header");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= n) {
    const unsigned char* chunk = b + pos;
    const std::uint32_t len = detail::read_u32le(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || body + len > n) fail("format", "malformed WAV: truncated fmt chunk");
      format = detail::read_u16le(b + body);
      channels = detail::read_u16le(b + body + 2);
      rate = detail::read_u32le(b + body + 4);
      bits = detail::read_u16le(b + body + 14);
      if (format == 0xFFFE) {
        if (len < 26) fail("format", "malformed WAV: truncated extensible fmt chunk");
        format = detail::read_u16le(b + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = b + body;
      // Tolerate writers that leave the data length unset or oversized.
      data_len = std::min<std::size_t>(len, n - body);
      break;
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt) fail("format", "malformed WAV: no fmt chunk");
  if (data == nullptr) fail("format", "malformed WAV: no data chunk");
  if (channels < 1) fail("format", "malformed WAV: zero channels");
  if (channels > 2) fail("unsupported", "unsupported WAV: more than 2 channels");
  if (rate == 0) fail("format", "malformed WAV: zero sample rate");

  const bool is_int = format == 1 && (bits == 16 || bits == 24);
  const bool is_float = format == 3 && bits == 32;
  if (!is_int && !is_float)
    fail("unsupported", "unsupported WAV encoding (format " + std::to_string(format) +
                            ", " + std::to_string(bits) + " bits)");

  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * channels;
  const std::size_t frames = data_len / frame_bytes;

  auto sample_at = [&](const unsigned char* p) -> double {
    if (is_float) {
      float f;
      std::uint32_t u = detail::read_u32le(p);
      std::memcpy(&f, &u, 4);
      return f;
    }
    if (bits == 16) {
      auto v = static_cast<std::int16_t>(detail::read_u16le(p));
      return v / 32768.0;
    }
    std::int32_t v = std::int32_t(p[0]) | (std::int32_t(p[1]) << 8) | (std::int32_t(p[2]) << 16);
    if (v & 0x800000) v -= 0x1000000;
    return v / 8388608.0;
  };

  StereoClip clip;
  clip.id = std::move(id);
  clip.sample_rate = static_cast<int>(rate);
  clip.left.resize(frames);
  clip.right.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const unsigned char* p = data + i * frame_bytes;
    clip.left[i] = sample_at(p);
    clip.right[i] = channels == 2 ? sample_at(p + bytes_per_sample) : clip.left[i];
  }
  clip.validate();
  return clip;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("io", "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline StereoClip load_wav(const std::filesystem::path& path, std::string id = {}) {
  if (!std::filesystem::exists(path)) fail("io", "missing file '" + path.string() + "'");
  return decode_wav(read_file_bytes(path), id.empty() ? path.stem().string() : std::move(id));
}

// 16-bit PCM stereo encoding. Samples are clipped to [-1, 1).
inline std::string encode_wav16(const StereoClip& clip) {
  clip.validate();
  const std::uint32_t frames = static_cast<std::uint32_t>(clip.size());
  const std::uint32_t data_len = frames * 4;
  std::string s;
  s.reserve(44 + data_len);
  s += "RIFF";
  detail::put_u32le(s, 36 + data_len);
  s += "WAVEfmt ";
  detail::put_u32le(s, 16);
  detail::put_u16le(s, 1);
  detail::put_u16le(s, 2);
  detail::put_u32le(s, static_cast<std::uint32_t>(clip.sample_rate));
  detail::put_u32le(s, static_cast<std::uint32_t>(clip.sample_rate) * 4);
  detail::put_u16le(s, 4);
  detail::put_u16le(s, 16);
  s += "data";
  detail::put_u32le(s, data_len);
  auto q = [](double x) {
    double v = std::round(x * 32768.0);
    v = std::clamp(v, -32768.0, 32767.0);
    return static_cast<std::uint16_t>(static_cast<std::int16_t>(v));
  };
  for (std::uint32_t i = 0; i < frames; ++i) {
    detail::put_u16le(s, q(clip.left[i]));
    detail::put_u16le(s, q(clip.right[i]));
  }
  return s;
}

inline void write_wav16(const std::filesystem::path& path, const StereoClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("io", "cannot write '" + path.string() + "'");
  const std::string bytes = encode_wav16(clip);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Dataset manifest: id<TAB>path<TAB>label<TAB>fold, one row per clip.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::string path;
  std::string label;
  int fold = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> classes;  // first-appearance order
  int n_folds = 0;
  std::filesystem::path base_dir;    // relative paths resolve against this

  std::size_t n_classes() const { return classes.size(); }

  int class_index(const std::string& label) const {
    for (std::size_t c = 0; c < classes.size(); ++c)
      if (classes[c] == label) return static_cast<int>(c);
    fail("value", "unknown label '" + label + "'");
  }

  std::vector<int> label_indices() const {
    std::vector<int> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(class_index(e.label));
    return out;
  }

  std::filesystem::path resolve(const ManifestEntry& e) const {
    std::filesystem::path p(e.path);
    return p.is_absolute() ? p : base_dir / p;
  }

  const ManifestEntry& find(const std::string& id) const {
    for (const auto& e : entries)
      if (e.id == id) return e;
    fail("value", "clip '" + id + "' not in manifest");
  }

  // Entries whose fold is (or is not, when `invert`) in `folds`, in manifest order.
  std::vector<ManifestEntry> select(const std::set<int>& folds, bool invert = false) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if ((folds.count(e.fold) > 0) != invert) out.push_back(e);
    return out;
  }
};

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

// Parses manifest text. When `expected_folds` is set, every fold index must lie
// in [1, expected_folds]; otherwise n_folds is the largest fold index seen.
inline DatasetManifest parse_manifest(const std::string& text,
                                      std::optional<int> expected_folds = std::nullopt) {
  DatasetManifest m;
  std::set<std::string> ids;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  int max_fold = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split(line, '\t');
    const std::string where = "manifest line " + std::to_string(line_no);
    if (cols.size() != 4) fail("format", where + ": expected 4 tab-separated columns");
    ManifestEntry e{cols[0], cols[1], cols[2], 0};
    if (e.id.empty()) fail("format", where + ": empty clip id");
    if (e.label.empty()) fail("format", where + ": empty class label");
    try {
      std::size_t used = 0;
      e.fold = std::stoi(cols[3], &used);
      if (used != cols[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail("format", where + ": fold '" + cols[3] + "' is not an integer");
    }
    if (e.fold < 1) fail("value", where + ": unknown fold " + cols[3]);
    if (expected_folds && e.fold > *expected_folds)
      fail("value", where + ": unknown fold " + std::to_string(e.fold) + " (n_folds=" +
                        std::to_string(*expected_folds) + ")");
    if (!ids.insert(e.id).second) fail("value", where + ": duplicate clip id '" + e.id + "'");
    if (std::find(m.classes.begin(), m.classes.end(), e.label) == m.classes.end())
      m.classes.push_back(e.label);
    max_fold = std::max(max_fold, e.fold);
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) fail("format", "manifest is empty");
  m.n_folds = expected_folds ? *expected_folds : max_fold;
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path,
                                     std::optional<int> expected_folds = std::nullopt) {
  auto m = parse_manifest(read_file_bytes(path), expected_folds);
  m.base_dir = path.parent_path();
  return m;
}

inline std::string format_manifest(const DatasetManifest& m) {
  std::string out;
  for (const auto& e : m.entries)
    out += e.id + '\t' + e.path + '\t' + e.label + '\t' + std::to_string(e.fold) + '\n';
  return out;
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("io", "cannot write '" + path.string() + "'");
  out << format_manifest(m);
}

}  // namespace ascm
