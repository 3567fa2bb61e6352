// ascm/scores.hpp

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

// Score TSV, the exchange format between the i-vector, CNN and fusion stages:
//   id<TAB>label_1<TAB>...<TAB>label_C
//   clip<TAB>score_1<TAB>...<TAB>score_C
// Scores are printed with enough digits to re-read the same double.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ascm/audio.hpp"
#include "ascm/io.hpp"

namespace ascm {

struct ScoreMatrix {
  Matrix scores;  // N x C
  std::vector<std::string> ids;
  std::vector<std::string> classes;
  std::string tag;

  Eigen::Index rows() const { return scores.rows(); }
  Eigen::Index cols() const { return scores.cols(); }

  void validate() const {
    require(scores.rows() == static_cast<Eigen::Index>(ids.size()), "shape",
            "score matrix rows do not match clip ids");
    require(scores.cols() == static_cast<Eigen::Index>(classes.size()), "shape",
            "score matrix columns do not match class list");
    require(scores.allFinite(), "value", "score matrix '" + tag + "' has non-finite entries");
  }

  std::vector<int> argmax() const {
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      Eigen::Index best;
      scores.row(i).maxCoeff(&best);
      out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
  }

  // Rows reordered to follow `order`; every id must be present.
  ScoreMatrix reorder(const std::vector<std::string>& order) const {
    ScoreMatrix out;
    out.classes = classes;
    out.tag = tag;
    out.ids = order;
    out.scores.resize(static_cast<Eigen::Index>(order.size()), scores.cols());
    std::map<std::string, Eigen::Index> pos;
    for (std::size_t i = 0; i < ids.size(); ++i) pos[ids[i]] = static_cast<Eigen::Index>(i);
    for (std::size_t i = 0; i < order.size(); ++i) {
      auto it = pos.find(order[i]);
      if (it == pos.end()) fail("align", "clip '" + order[i] + "' missing from scores '" + tag + "'");
      out.scores.row(static_cast<Eigen::Index>(i)) = scores.row(it->second);
    }
    return out;
  }
};

// Throws unless a and b list the same clips and classes in the same order.
inline void check_aligned(const ScoreMatrix& a, const ScoreMatrix& b) {
  if (a.classes != b.classes)
    fail("align", "score sets '" + a.tag + "' and '" + b.tag + "' use different class orders");
  if (a.ids != b.ids)
    fail("align", "score sets '" + a.tag + "' and '" + b.tag + "' cover different clips");
}

inline std::string format_scores(const ScoreMatrix& s) {
  s.validate();
  std::string out = "id";
  for (const auto& c : s.classes) out += '\t' + c;
  out += '\n';
  for (Eigen::Index i = 0; i < s.scores.rows(); ++i) {
    out += s.ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < s.scores.cols(); ++j) out += '\t' + format_double(s.scores(i, j));
    out += '\n';
  }
  return out;
}

inline ScoreMatrix parse_scores(const std::string& text, std::string tag = {}) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail("format", "score file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split(line, '\t');
  if (header.size() < 2 || header[0] != "id") fail("format", "score file: bad header");
  ScoreMatrix s;
  s.tag = std::move(tag);
  s.classes.assign(header.begin() + 1, header.end());
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = split(line, '\t');
    const std::string where = "score file line " + std::to_string(line_no);
    if (cols.size() != header.size()) fail("format", where + ": wrong column count");
    s.ids.push_back(cols[0]);
    std::vector<double> r;
    for (std::size_t j = 1; j < cols.size(); ++j) r.push_back(parse_double(cols[j], where));
    rows.push_back(std::move(r));
  }
  s.scores.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(s.classes.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      s.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  s.validate();
  return s;
}

inline void write_scores(const std::filesystem::path& path, const ScoreMatrix& s) {
  detail::write_bytes(path, format_scores(s));
}

inline ScoreMatrix read_scores(const std::filesystem::path& path) {
  return parse_scores(read_file_bytes(path), path.stem().string());
}

}  // namespace ascm
