// ascm/models.hpp

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

// Container (de)serialisation of the trained i-vector models.

#include <string>

#include "ascm/backend.hpp"
#include "ascm/gmm.hpp"
#include "ascm/io.hpp"
#include "ascm/ivector.hpp"

namespace ascm {

inline Container ubm_to_container(const DiagGmm& g, const std::string& metadata = {}) {
  Container c;
  c.set_text("kind", "ubm");
  c.set("weights", g.weights);
  c.set("means", g.means);
  c.set("variances", g.variances);
  c.set_text("metadata", metadata);
  return c;
}

inline DiagGmm ubm_from_container(const Container& c) {
  require(c.text("kind") == "ubm", "format", "container does not hold a UBM");
  DiagGmm g{c.vector("weights"), c.matrix("means"), c.matrix("variances")};
  g.validate();
  return g;
}

inline Container tmatrix_to_container(const TMatrix& t, const std::string& metadata = {}) {
  Container c;
  c.set_text("kind", "tmatrix");
  c.set("T", t.t);
  c.set_scalar("components", t.components);
  c.set_scalar("dim", t.dim);
  c.set_text("metadata", metadata);
  return c;
}

inline TMatrix tmatrix_from_container(const Container& c) {
  require(c.text("kind") == "tmatrix", "format", "container does not hold a T matrix");
  TMatrix t{c.matrix("T"), static_cast<int>(c.scalar("components")), static_cast<int>(c.scalar("dim"))};
  require(t.t.rows() == static_cast<Eigen::Index>(t.components) * t.dim, "format", "T matrix shape mismatch");
  return t;
}

inline Container backend_to_container(const Backend& b, const std::string& metadata = {}) {
  Container c;
  c.set_text("kind", "backend");
  c.set("lda", b.projection.lda);
  c.set("wccn", b.projection.wccn);
  c.set("class_models", b.models.models);
  c.set_text("classes", join(b.models.classes, '\t'));
  c.set_text("metadata", metadata);
  return c;
}

inline Backend backend_from_container(const Container& c) {
  require(c.text("kind") == "backend", "format", "container does not hold a backend");
  Backend b;
  b.projection.lda = c.matrix("lda");
  b.projection.wccn = c.matrix("wccn");
  b.models.models = c.matrix("class_models");
  b.models.classes = split(c.text("classes"), '\t');
  b.projection.classes = b.models.classes;
  return b;
}

// A set of i-vectors with their clip ids, one per row.
struct IvectorSet {
  Matrix y;
  std::vector<std::string> ids;
  std::string source;
};

inline Container ivectors_to_container(const IvectorSet& s) {
  Container c;
  c.set_text("kind", "ivectors");
  c.set("ivectors", s.y);
  c.set_text("ids", join(s.ids, '\n'));
  c.set_text("source", s.source);
  return c;
}

inline IvectorSet ivectors_from_container(const Container& c) {
  require(c.text("kind") == "ivectors", "format", "container does not hold i-vectors");
  IvectorSet s{c.matrix("ivectors"), split(c.text("ids"), '\n'), c.text("source")};
  require(static_cast<Eigen::Index>(s.ids.size()) == s.y.rows(), "format", "i-vector ids do not match rows");
  return s;
}

}  // namespace ascm
