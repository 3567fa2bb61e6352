// ascm/metrics.hpp

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

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ascm/common.hpp"

namespace ascm {

struct SceneGrouping {
  std::set<std::string> indoor;
  std::set<std::string> outdoor;

  void validate() const {
    for (const auto& l : indoor)
      require(!outdoor.count(l), "config", "label '" + l + "' is both indoor and outdoor");
  }

  bool covers(const std::vector<std::string>& classes) const {
    for (const auto& c : classes)
      if (!indoor.count(c) && !outdoor.count(c)) return false;
    return true;
  }

  // The indoor/outdoor split of the fifteen TUT Acoustic Scenes 2016 labels.
  static SceneGrouping tut2016() {
    return {{"bus", "cafe/restaurant", "car", "grocery_store", "home", "library", "metro_station",
             "office", "train", "tram"},
            {"beach", "city_center", "forest_path", "park", "residential_area"}};
  }
};

inline const std::vector<std::string>& tut2016_labels() {
  static const std::vector<std::string> labels = {
      "beach",   "bus",           "cafe/restaurant", "car",   "city_center",
      "forest_path", "grocery_store", "home",        "library", "metro_station",
      "office",  "park",          "residential_area", "train", "tram"};
  return labels;
}

struct Metrics {
  double overall = 0.0;                         // percent
  std::vector<std::optional<double>> per_class; // absent when a class has no clips
  std::vector<int> class_counts;
  std::optional<double> indoor;                 // absent when no clip is indoor
  std::optional<double> outdoor;
};

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  require(predictions.size() == labels.size() && !labels.empty(), "shape",
          "predictions and labels must be aligned and non-empty");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += predictions[i] == labels[i];
  return 100.0 * double(ok) / double(labels.size());
}

inline Metrics evaluate(const std::vector<int>& predictions, const std::vector<int>& labels,
                        const std::vector<std::string>& classes,
                        const std::optional<SceneGrouping>& grouping = std::nullopt) {
  const int C = static_cast<int>(classes.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= C || predictions[i] < 0 || predictions[i] >= C)
      fail("value", "unknown label index in evaluation");
  }
  Metrics m;
  m.overall = accuracy(predictions, labels);
  std::vector<int> hit(static_cast<std::size_t>(C), 0);
  m.class_counts.assign(static_cast<std::size_t>(C), 0);
  int in_n = 0, in_ok = 0, out_n = 0, out_ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    const bool ok = predictions[i] == labels[i];
    ++m.class_counts[c];
    hit[c] += ok;
    if (grouping) {
      if (grouping->indoor.count(classes[c])) {
        ++in_n;
        in_ok += ok;
      } else if (grouping->outdoor.count(classes[c])) {
        ++out_n;
        out_ok += ok;
      } else {
        fail("value", "label '" + classes[c] + "' is neither indoor nor outdoor");
      }
    }
  }
  for (int c = 0; c < C; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    if (m.class_counts[cu] > 0)
      m.per_class.push_back(100.0 * hit[cu] / m.class_counts[cu]);
    else
      m.per_class.push_back(std::nullopt);
  }
  if (in_n > 0) m.indoor = 100.0 * in_ok / in_n;
  if (out_n > 0) m.outdoor = 100.0 * out_ok / out_n;
  return m;
}

}  // namespace ascm
