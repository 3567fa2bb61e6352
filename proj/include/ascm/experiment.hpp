// ascm/experiment.hpp

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

// Cross-validated experiments over the i-vector systems (BAS, SMB, MMB, CMB),
// the CNN (VGG) and the fused hybrid (HYB).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ascm/audio.hpp"
#include "ascm/backend.hpp"
#include "ascm/cnn.hpp"
#include "ascm/config.hpp"
#include "ascm/features.hpp"
#include "ascm/fusion.hpp"
#include "ascm/gmm.hpp"
#include "ascm/io.hpp"
#include "ascm/ivector.hpp"
#include "ascm/metrics.hpp"
#include "ascm/models.hpp"
#include "ascm/scores.hpp"

namespace ascm {

// ---------------------------------------------------------------------------
// Feature streams
// ---------------------------------------------------------------------------

struct StreamSpec {
  enum class Kind { kBoosted, kStandard, kStatic, kDelta, kDoubleDelta };
  Kind kind = Kind::kBoosted;
  double window_ms = 20.0;
  int n_coeffs = 20;
  bool include_c0 = true;

  std::string name() const {
    switch (kind) {
      case Kind::kBoosted: return "boosted";
      case Kind::kStandard: return "standard";
      case Kind::kStatic: return "static";
      case Kind::kDelta: return "delta";
      case Kind::kDoubleDelta: return "double_delta";
    }
    return "?";
  }

  std::string key() const {
    if (kind == Kind::kBoosted) return "boosted";
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s_%gms_%d_%s", name().c_str(), window_ms, n_coeffs,
                  include_c0 ? "c0" : "noc0");
    return buf;
  }

  static Kind parse_kind(const std::string& s) {
    if (s == "boosted") return Kind::kBoosted;
    if (s == "standard") return Kind::kStandard;
    if (s == "static") return Kind::kStatic;
    if (s == "delta") return Kind::kDelta;
    if (s == "double_delta") return Kind::kDoubleDelta;
    fail("config", "unknown feature stream '" + s + "'");
  }
};

inline FeatureMatrix compute_stream(const std::vector<double>& signal, double fs, const StreamSpec& s,
                                    const MfccConfig& mfcc) {
  using K = StreamSpec::Kind;
  if (s.kind == K::kBoosted) return extract_boosted_features(signal, fs, mfcc);
  MfccConfig cfg = mfcc;
  cfg.n_mel_filters = std::max(cfg.n_mel_filters, s.n_coeffs + (s.include_c0 ? 0 : 1));
  const FeatureMatrix base = extract_mfcc(signal, fs, s.window_ms, s.n_coeffs, s.include_c0, cfg);
  switch (s.kind) {
    case K::kStatic: return base;
    case K::kDelta: return compute_deltas(base, cfg.delta_span);
    case K::kDoubleDelta: return compute_deltas(compute_deltas(base, cfg.delta_span), cfg.delta_span);
    case K::kStandard: {
      const FeatureMatrix d1 = compute_deltas(base, cfg.delta_span);
      const FeatureMatrix d2 = compute_deltas(d1, cfg.delta_span);
      FeatureMatrix out;
      out.frame_rate = base.frame_rate;
      out.data.resize(base.frames(), 3 * base.dims());
      out.data << base.data, d1.data, d2.data;
      return out;
    }
    default: break;
  }
  fail("config", "unhandled feature stream");
}

struct FeatureRequest {
  std::string key;
  Source source = Source::kMean;
  bool spectrogram = false;
  StreamSpec stream;
};

using FeatureStore = std::map<std::string, std::vector<FeatureMatrix>>;  // key -> per manifest entry

// Loads every clip once and computes all requested streams.
inline FeatureStore compute_features(const DatasetManifest& m, const std::vector<FeatureRequest>& reqs,
                                     const MfccConfig& mfcc, const SpectrogramConfig& spec, int jobs) {
  FeatureStore store;
  for (const auto& r : reqs) store[r.key].resize(m.entries.size());
  parallel_for(m.entries.size(), jobs, [&](std::size_t i) {
    const auto& e = m.entries[i];
    const SourceSet src = derive_sources(load_wav(m.resolve(e), e.id));
    for (const auto& r : reqs) {
      const auto& sig = src.get(r.source);
      store.at(r.key)[i] = r.spectrogram ? log_mel_spectrogram(sig, src.sample_rate, spec)
                                         : compute_stream(sig, src.sample_rate, r.stream, mfcc);
    }
  });
  return store;
}

// ---------------------------------------------------------------------------
// Provenance
// ---------------------------------------------------------------------------

struct ProvenanceRecord {
  int fold = 0;
  std::string model;
  std::vector<std::string> trained_on;
};

inline std::string format_provenance(const ProvenanceRecord& r) {
  nlohmann::ordered_json j;
  j["fold"] = r.fold;
  j["model"] = r.model;
  j["trained_on"] = r.trained_on;
  return j.dump();
}

inline ProvenanceRecord parse_provenance(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  return {j.at("fold").get<int>(), j.at("model").get<std::string>(),
          j.at("trained_on").get<std::vector<std::string>>()};
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct IvectorConfig {
  int ubm_components = 256;
  EmConfig em;
  TvConfig tv;
  int lda_dims = 0;  // 0: C - 1
};

struct CnnConfig {
  std::string arch = "vgg";  // vgg | compact
  double width = 1.0;        // vgg channel multiplier
  int channels = 8;          // compact base channels
  int excerpt_width = 149;
  int train_stride = 74;
  int test_stride = 10;
  Source source = Source::kMean;
  cnn::TrainConfig train;

  std::vector<cnn::LayerSpec> architecture(int n_classes) const {
    if (arch == "vgg") return cnn::vgg_architecture(n_classes, width);
    if (arch == "compact") return cnn::compact_architecture(n_classes, channels);
    fail("config", "unknown cnn.arch '" + arch + "'");
  }
};

inline const std::vector<std::string>& all_systems() {
  static const std::vector<std::string> s = {"BAS", "SMB", "MMB", "CMB", "VGG", "HYB"};
  return s;
}

struct ExperimentConfig {
  std::filesystem::path manifest;
  std::filesystem::path out_dir = "out";
  std::vector<std::string> systems = {"SMB", "MMB", "CMB", "VGG", "HYB"};
  MfccConfig mfcc;
  StreamSpec bas_stream{StreamSpec::Kind::kStandard, 40.0, 20, true};
  SpectrogramConfig spectrogram;
  IvectorConfig ivector;
  CnnConfig cnn;
  FusionTrainConfig fusion;
  std::optional<SceneGrouping> grouping;
  std::uint64_t seed = 0;
  int jobs = 1;
  // MFCC sweep grid
  std::vector<std::string> sweep_streams = {"static", "delta", "double_delta"};
  std::vector<double> sweep_windows = {20, 60, 100};
  std::vector<bool> sweep_c0 = {true, false};
  int sweep_coeffs = 20;

  bool wants(const std::string& s) const {
    return std::find(systems.begin(), systems.end(), s) != systems.end();
  }
  bool needs_multichannel() const { return wants("MMB") || wants("CMB") || wants("HYB"); }
  bool needs_cnn() const { return wants("VGG") || wants("HYB"); }

  static ExperimentConfig from(const KeyValueConfig& kv) {
    ExperimentConfig c;
    const auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() || p.empty() ? path : kv.base_dir() / path;
    };
    c.manifest = resolve(kv.get("manifest", std::string()));
    c.out_dir = kv.get("out", c.out_dir.string());
    c.systems = kv.get_list("systems", c.systems);
    for (const auto& s : c.systems)
      if (std::find(all_systems().begin(), all_systems().end(), s) == all_systems().end())
        fail("config", "unknown system '" + s + "'");
    c.seed = kv.get("seed", c.seed);
    c.jobs = kv.get("jobs", c.jobs);

    auto& m = c.mfcc;
    m.frame_ms = kv.get("mfcc.frame_ms", m.frame_ms);
    m.static_window_ms = kv.get("mfcc.static_window_ms", m.static_window_ms);
    m.delta_window_ms = kv.get("mfcc.delta_window_ms", m.delta_window_ms);
    m.n_static = kv.get("mfcc.n_static", m.n_static);
    m.n_delta = kv.get("mfcc.n_delta", m.n_delta);
    m.n_double_delta = kv.get("mfcc.n_double_delta", m.n_double_delta);
    m.n_mel_filters = kv.get("mfcc.n_mel_filters", m.n_mel_filters);
    m.fmin_hz = kv.get("mfcc.fmin_hz", m.fmin_hz);
    m.fmax_hz = kv.get("mfcc.fmax_hz", m.fmax_hz);
    m.include_c0_static = kv.get("mfcc.include_c0_static", m.include_c0_static);
    m.include_c0_dynamic = kv.get("mfcc.include_c0_dynamic", m.include_c0_dynamic);
    m.delta_span = kv.get("mfcc.delta_span", m.delta_span);
    m.log_floor = kv.get("mfcc.log_floor", m.log_floor);
    m.validate();

    c.bas_stream.window_ms = kv.get("bas.window_ms", c.bas_stream.window_ms);
    c.bas_stream.n_coeffs = kv.get("bas.n_coeffs", c.bas_stream.n_coeffs);
    c.bas_stream.include_c0 = kv.get("bas.include_c0", c.bas_stream.include_c0);

    auto& s = c.spectrogram;
    s.sample_rate_hz = kv.get("spectrogram.sample_rate_hz", s.sample_rate_hz);
    s.fft_size = kv.get("spectrogram.fft_size", s.fft_size);
    s.frame_rate_fps = kv.get("spectrogram.frame_rate_fps", s.frame_rate_fps);
    s.n_bands = kv.get("spectrogram.n_bands", s.n_bands);
    s.fmin_hz = kv.get("spectrogram.fmin_hz", s.fmin_hz);
    s.fmax_hz = kv.get("spectrogram.fmax_hz", s.fmax_hz);
    s.log_floor = kv.get("spectrogram.log_floor", s.log_floor);
    s.validate();

    auto& iv = c.ivector;
    iv.ubm_components = kv.get("ubm.components", iv.ubm_components);
    iv.em.max_iters = kv.get("ubm.iters", iv.em.max_iters);
    iv.em.rel_tol = kv.get("ubm.rel_tol", iv.em.rel_tol);
    iv.em.variance_floor_ratio = kv.get("ubm.variance_floor_ratio", iv.em.variance_floor_ratio);
    iv.em.kmeans_iters = kv.get("ubm.kmeans_iters", iv.em.kmeans_iters);
    iv.tv.rank = kv.get("tv.rank", iv.tv.rank);
    iv.tv.iters = kv.get("tv.iters", iv.tv.iters);
    iv.tv.init_scale = kv.get("tv.init_scale", iv.tv.init_scale);
    iv.lda_dims = kv.get("backend.lda_dims", iv.lda_dims);

    auto& n = c.cnn;
    n.arch = kv.get("cnn.arch", n.arch);
    n.width = kv.get("cnn.width", n.width);
    n.channels = kv.get("cnn.channels", n.channels);
    n.excerpt_width = kv.get("cnn.excerpt_width", n.excerpt_width);
    n.train_stride = kv.get("cnn.train_stride", std::max(1, n.excerpt_width / 2));
    n.test_stride = kv.get("cnn.test_stride", n.test_stride);
    n.source = parse_source(kv.get("cnn.source", source_name(n.source)));
    n.train.batch_size = kv.get("cnn.batch_size", n.train.batch_size);
    n.train.initial_lr = kv.get("cnn.initial_lr", n.train.initial_lr);
    n.train.lr_halving_period = kv.get("cnn.lr_halving_period", n.train.lr_halving_period);
    n.train.momentum = kv.get("cnn.momentum", n.train.momentum);
    n.train.weight_decay = kv.get("cnn.weight_decay", n.train.weight_decay);
    n.train.epochs = kv.get("cnn.epochs", n.train.epochs);
    n.train.validate();

    c.fusion.max_iters = kv.get("fusion.max_iters", c.fusion.max_iters);
    c.fusion.grad_tol = kv.get("fusion.grad_tol", c.fusion.grad_tol);

    if (kv.has("grouping.indoor") || kv.has("grouping.outdoor")) {
      SceneGrouping g;
      for (const auto& l : kv.get_list("grouping.indoor", {})) g.indoor.insert(l);
      for (const auto& l : kv.get_list("grouping.outdoor", {})) g.outdoor.insert(l);
      g.validate();
      c.grouping = g;
    }

    c.sweep_streams = kv.get_list("sweep.streams", c.sweep_streams);
    if (kv.has("sweep.windows_ms")) {
      c.sweep_windows.clear();
      for (const auto& w : kv.get_list("sweep.windows_ms", {})) c.sweep_windows.push_back(parse_double(w, "sweep.windows_ms"));
    }
    if (kv.has("sweep.c0")) {
      c.sweep_c0.clear();
      for (const auto& v : kv.get_list("sweep.c0", {})) {
        if (v == "with") c.sweep_c0.push_back(true);
        else if (v == "without") c.sweep_c0.push_back(false);
        else fail("config", "sweep.c0 entries must be 'with' or 'without'");
      }
    }
    c.sweep_coeffs = kv.get("sweep.n_coeffs", c.sweep_coeffs);

    if (const auto unused = kv.unused_keys(); !unused.empty())
      fail("config", "unknown config key '" + unused.front() + "'");
    return c;
  }
};

// ---------------------------------------------------------------------------
// One i-vector system (UBM, T, LDA/WCCN, class models) for one feature stream
// ---------------------------------------------------------------------------

struct IvectorSystem {
  DiagGmm ubm;
  TMatrix tm;
  Backend backend;

  // Length-normalised i-vectors, one row per segment.
  Matrix extract(const std::vector<const FeatureMatrix*>& feats, int jobs) const {
    const IvectorPosterior post(tm, ubm);
    Matrix out(static_cast<Eigen::Index>(feats.size()), tm.rank());
    parallel_for(feats.size(), jobs, [&](std::size_t i) {
      IVector v{post.infer(accumulate_stats(ubm, *feats[i]), false).mean, {}, {}};
      out.row(static_cast<Eigen::Index>(i)) = length_normalize(std::move(v)).y.transpose();
    });
    return out;
  }
};

inline Matrix pool_frames(const std::vector<const FeatureMatrix*>& feats) {
  Eigen::Index rows = 0;
  for (const auto* f : feats) rows += f->frames();
  Matrix out(rows, feats.front()->dims());
  Eigen::Index r = 0;
  for (const auto* f : feats) {
    out.middleRows(r, f->frames()) = f->data;
    r += f->frames();
  }
  return out;
}

inline IvectorSystem train_ivector_system(const std::vector<const FeatureMatrix*>& feats,
                                          const std::vector<int>& labels,
                                          const std::vector<std::string>& classes, const IvectorConfig& cfg,
                                          std::uint64_t seed, int jobs) {
  require(!feats.empty(), "data", "no training clips");
  IvectorSystem sys;
  EmConfig em = cfg.em;
  em.seed = derive_seed(seed, "ubm");
  sys.ubm = train_ubm(pool_frames(feats), cfg.ubm_components, em);

  std::vector<SuffStats> stats(feats.size());
  parallel_for(feats.size(), jobs, [&](std::size_t i) { stats[i] = accumulate_stats(sys.ubm, *feats[i]); });
  TvConfig tv = cfg.tv;
  tv.seed = derive_seed(seed, "tv");
  tv.jobs = jobs;
  sys.tm = train_total_variability(stats, sys.ubm, tv);

  const Matrix train_iv = sys.extract(feats, jobs);
  sys.backend = train_backend(train_iv, labels, classes, cfg.lda_dims);
  return sys;
}

// ---------------------------------------------------------------------------
// Cross validation
// ---------------------------------------------------------------------------

struct SystemResult {
  ScoreMatrix scores;
  std::vector<int> predictions;
  Metrics metrics;
};

struct FoldResult {
  int fold = 0;
  std::vector<std::string> test_ids;
  std::vector<int> labels;
  std::map<std::string, SystemResult> systems;
  std::optional<std::string> error;
};

struct CvResult {
  std::vector<std::string> classes;
  std::vector<FoldResult> folds;
  std::vector<ProvenanceRecord> provenance;
  std::map<std::string, double> average;  // system -> mean fold accuracy
};

inline std::string fold_seed_name(int fold, const std::string& what) {
  return "fold" + std::to_string(fold) + "." + what;
}

inline std::vector<const FeatureMatrix*> gather(const std::vector<FeatureMatrix>& all,
                                                const std::vector<std::size_t>& idx) {
  std::vector<const FeatureMatrix*> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&all[i]);
  return out;
}

struct FoldSplit {
  std::vector<std::size_t> train, test;
  std::vector<std::string> train_ids, test_ids;
  std::vector<int> train_labels, test_labels;
};

inline FoldSplit split_fold(const DatasetManifest& m, int fold) {
  FoldSplit s;
  const auto labels = m.label_indices();
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const bool held_out = m.entries[i].fold == fold;
    (held_out ? s.test : s.train).push_back(i);
    (held_out ? s.test_ids : s.train_ids).push_back(m.entries[i].id);
    (held_out ? s.test_labels : s.train_labels).push_back(labels[i]);
  }
  if (s.test.empty()) fail("data", "fold " + std::to_string(fold) + " has no clips");
  if (s.train.empty()) fail("data", "fold " + std::to_string(fold) + " leaves no training clips");
  return s;
}

// Trains one i-vector system on the training part of a fold and scores the
// held-out part. Seeds depend on fold and source only.
inline ScoreMatrix ivector_fold_scores(const DatasetManifest& m, const FoldSplit& split,
                                       const std::vector<FeatureMatrix>& feats, Source source,
                                       const IvectorConfig& cfg, std::uint64_t root_seed, int fold, int jobs,
                                       const std::string& tag) {
  const std::uint64_t seed = derive_seed(root_seed, fold_seed_name(fold, "ivector." + source_name(source)));
  const auto sys = train_ivector_system(gather(feats, split.train), split.train_labels, m.classes, cfg, seed, jobs);
  return sys.backend.score(sys.extract(gather(feats, split.test), jobs), split.test_ids, tag);
}

inline SystemResult make_result(ScoreMatrix scores, const FoldSplit& split, const std::vector<std::string>& classes,
                                const std::optional<SceneGrouping>& grouping) {
  SystemResult r;
  r.scores = std::move(scores);
  r.predictions = r.scores.argmax();
  r.metrics = evaluate(r.predictions, split.test_labels, classes, grouping);
  return r;
}

inline std::optional<SceneGrouping> grouping_for(const ExperimentConfig& cfg,
                                                 const std::vector<std::string>& classes) {
  if (cfg.grouping) {
    require(cfg.grouping->covers(classes), "config", "configured grouping does not cover every label");
    return cfg.grouping;
  }
  const auto tut = SceneGrouping::tut2016();
  if (tut.covers(classes)) return tut;
  return std::nullopt;
}

// Builds the network input excerpts of a set of clips.
inline void collect_excerpts(const std::vector<FeatureMatrix>& specs, const std::vector<std::size_t>& idx,
                             const std::vector<int>& labels, std::size_t width, std::size_t stride,
                             std::vector<Matrix>& patches, std::vector<int>& out_labels) {
  for (std::size_t k = 0; k < idx.size(); ++k)
    for (auto& e : excerpt_windows(specs[idx[k]], width, stride)) {
      patches.push_back(std::move(e.patch));
      out_labels.push_back(labels[k]);
    }
}

inline ScoreMatrix cnn_fold_scores(const DatasetManifest& m, const FoldSplit& split,
                                   const std::vector<FeatureMatrix>& specs, const ExperimentConfig& cfg,
                                   int fold, const std::filesystem::path& fold_dir) {
  const auto& cc = cfg.cnn;
  const auto width = static_cast<std::size_t>(cc.excerpt_width);
  std::vector<Matrix> patches;
  std::vector<int> labels;
  collect_excerpts(specs, split.train, split.train_labels, width, static_cast<std::size_t>(cc.train_stride), patches,
                   labels);
  const std::uint64_t seed = derive_seed(cfg.seed, fold_seed_name(fold, "cnn"));
  const cnn::Shape input{1, cfg.spectrogram.n_bands, cc.excerpt_width};
  auto net = cnn::Network<float>::build(cc.architecture(static_cast<int>(m.classes.size())), input,
                                        derive_seed(seed, "init"));
  cnn::TrainConfig tc = cc.train;
  tc.seed = derive_seed(seed, "train");
  cnn::train(net, patches, labels, tc);
  net.to_container().save(fold_dir / "cnn.ascm");

  ScoreMatrix s;
  s.tag = "VGG";
  s.classes = m.classes;
  s.ids = split.test_ids;
  s.scores.resize(static_cast<Eigen::Index>(split.test.size()), static_cast<Eigen::Index>(m.classes.size()));
  for (std::size_t k = 0; k < split.test.size(); ++k) {
    const auto pred = cnn::predict_clip(net, specs[split.test[k]], width, static_cast<std::size_t>(cc.test_stride),
                                        split.test_ids[k]);
    s.scores.row(static_cast<Eigen::Index>(k)) = pred.log_scores().transpose();
  }
  return s;
}

inline std::string format_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_percent(*v) : std::string("NA");
}

// Writes summary.tsv (fold accuracies), classwise.tsv, groups.tsv and
// summary.txt. Contents depend only on the results, never on timing.
inline void write_summary(const CvResult& r, const std::vector<std::string>& systems,
                          const std::filesystem::path& out) {
  std::string tsv = "system";
  for (const auto& f : r.folds) tsv += "\tfold" + std::to_string(f.fold);
  tsv += "\tavg\n";
  std::string txt = "Cross-validation accuracy (%)\n";
  for (const auto& sys : systems) {
    tsv += sys;
    txt += sys + ":";
    for (const auto& f : r.folds) {
      auto it = f.systems.find(sys);
      const std::string v = it == f.systems.end() ? "NA" : format_percent(it->second.metrics.overall);
      tsv += '\t' + v;
      txt += ' ' + v;
    }
    auto avg = r.average.find(sys);
    const std::string a = avg == r.average.end() ? "NA" : format_percent(avg->second);
    tsv += '\t' + a + '\n';
    txt += "  avg " + a + '\n';
  }
  for (const auto& f : r.folds)
    if (f.error) txt += "fold " + std::to_string(f.fold) + " failed: " + *f.error + '\n';

  // Class-wise and group accuracies averaged over folds where defined.
  auto fold_mean = [&](const std::string& sys, auto getter) -> std::optional<double> {
    double s = 0;
    int n = 0;
    for (const auto& f : r.folds) {
      auto it = f.systems.find(sys);
      if (it == f.systems.end()) continue;
      if (auto v = getter(it->second.metrics)) {
        s += *v;
        ++n;
      }
    }
    return n ? std::optional<double>(s / n) : std::nullopt;
  };
  std::string cls = "class";
  for (const auto& sys : systems) cls += '\t' + sys;
  cls += '\n';
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    cls += r.classes[c];
    for (const auto& sys : systems)
      cls += '\t' + format_optional(fold_mean(sys, [&](const Metrics& m) { return m.per_class[c]; }));
    cls += '\n';
  }
  std::string groups = "group";
  for (const auto& sys : systems) groups += '\t' + sys;
  groups += "\nindoor";
  for (const auto& sys : systems) groups += '\t' + format_optional(fold_mean(sys, [](const Metrics& m) { return m.indoor; }));
  groups += "\noutdoor";
  for (const auto& sys : systems) groups += '\t' + format_optional(fold_mean(sys, [](const Metrics& m) { return m.outdoor; }));
  groups += '\n';

  detail::write_bytes(out / "summary.tsv", tsv);
  detail::write_bytes(out / "classwise.tsv", cls);
  detail::write_bytes(out / "groups.tsv", groups);
  detail::write_bytes(out / "summary.txt", txt);
}

inline void check_no_leakage(const std::vector<ProvenanceRecord>& records, const DatasetManifest& m) {
  for (const auto& r : records)
    for (const auto& id : r.trained_on)
      if (m.find(id).fold == r.fold)
        fail("leakage", "model '" + r.model + "' of fold " + std::to_string(r.fold) + " saw held-out clip '" + id + "'");
}

inline CvResult run_cv(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  const DatasetManifest m = load_manifest(cfg.manifest);
  require(m.n_folds >= 2, "data", "cross-validation needs at least two folds");
  require(!cfg.systems.empty(), "config", "no systems selected");
  std::filesystem::create_directories(cfg.out_dir);
  const auto grouping = grouping_for(cfg, m.classes);

  std::vector<Source> iv_sources;
  if (cfg.needs_multichannel())
    iv_sources.assign(std::begin(kAllSources), std::end(kAllSources));
  else if (cfg.wants("SMB"))
    iv_sources = {Source::kMean};

  std::vector<FeatureRequest> reqs;
  for (auto s : iv_sources) reqs.push_back({"boosted." + source_name(s), s, false, {}});
  if (cfg.wants("BAS")) reqs.push_back({"bas.mean", Source::kMean, false, cfg.bas_stream});
  if (cfg.needs_cnn()) reqs.push_back({"spectrogram", cfg.cnn.source, true, {}});
  if (log) *log << "computing features for " << m.entries.size() << " clips\n";
  const FeatureStore store = compute_features(m, reqs, cfg.mfcc, cfg.spectrogram, cfg.jobs);

  CvResult result;
  result.classes = m.classes;
  std::ofstream prov(cfg.out_dir / "provenance.jsonl", std::ios::binary);

  for (int fold = 1; fold <= m.n_folds; ++fold) {
    FoldResult fr;
    fr.fold = fold;
    const auto fold_dir = cfg.out_dir / ("fold" + std::to_string(fold));
    std::filesystem::create_directories(fold_dir);
    try {
      const FoldSplit split = split_fold(m, fold);
      fr.test_ids = split.test_ids;
      fr.labels = split.test_labels;
      std::vector<ProvenanceRecord> records;
      auto record = [&](const std::string& model, const std::vector<std::string>& ids) {
        records.push_back({fold, model, ids});
      };

      std::map<Source, ScoreMatrix> per_source;
      for (auto s : iv_sources) {
        if (log) *log << "fold " << fold << ": i-vector system, source " << source_name(s) << "\n";
        auto sc = ivector_fold_scores(m, split, store.at("boosted." + source_name(s)), s, cfg.ivector, cfg.seed,
                                      fold, cfg.jobs, "ivector_" + source_name(s));
        write_scores(fold_dir / ("ivector_" + source_name(s) + ".tsv"), sc);
        for (const char* part : {"ubm", "tv", "backend"}) record(std::string(part) + "." + source_name(s), split.train_ids);
        per_source.emplace(s, std::move(sc));
      }
      std::map<std::string, ScoreMatrix> sys_scores;
      if (cfg.wants("BAS")) {
        if (log) *log << "fold " << fold << ": BAS system\n";
        sys_scores["BAS"] = ivector_fold_scores(m, split, store.at("bas.mean"), Source::kMean, cfg.ivector, cfg.seed,
                                                fold, cfg.jobs, "BAS");
        for (const char* part : {"ubm", "tv", "backend"}) record(std::string(part) + ".bas", split.train_ids);
      }
      if (cfg.wants("SMB")) {
        sys_scores["SMB"] = per_source.at(Source::kMean);
        sys_scores["SMB"].tag = "SMB";
      }
      if (cfg.needs_multichannel()) {
        std::vector<ScoreMatrix> four;
        for (auto s : kAllSources) four.push_back(per_source.at(s));
        sys_scores["MMB"] = average_channel_scores(four);
        sys_scores["MMB"].tag = "MMB";
      }
      if (cfg.needs_cnn()) {
        if (log) *log << "fold " << fold << ": CNN\n";
        sys_scores["VGG"] = cnn_fold_scores(m, split, store.at("spectrogram"), cfg, fold, fold_dir);
        record("cnn", split.train_ids);
      }
      // Fusion models learn from this fold's held-out scores, which come from
      // models that never saw these clips.
      if (cfg.wants("CMB")) {
        const auto fm = train_fusion({sys_scores.at("MMB")}, split.test_labels, cfg.fusion);
        fm.to_container().save(fold_dir / "fusion_CMB.ascm");
        sys_scores["CMB"] = fuse_scores(fm, {sys_scores.at("MMB")});
        sys_scores["CMB"].tag = "CMB";
        record("fusion.CMB", split.test_ids);
      }
      if (cfg.wants("HYB")) {
        const std::vector<ScoreMatrix> sets = {sys_scores.at("MMB"), sys_scores.at("VGG")};
        const auto fm = train_fusion(sets, split.test_labels, cfg.fusion);
        fm.to_container().save(fold_dir / "fusion_HYB.ascm");
        sys_scores["HYB"] = fuse_scores(fm, sets);
        sys_scores["HYB"].tag = "HYB";
        record("fusion.HYB", split.test_ids);
      }
      // Only models that score held-out clips are checked; the fusion
      // calibrators are trained on held-out scores by construction.
      std::vector<ProvenanceRecord> scored_models;
      for (const auto& r : records)
        if (r.model.rfind("fusion.", 0) != 0) scored_models.push_back(r);
      check_no_leakage(scored_models, m);

      for (const auto& sys : cfg.systems) {
        write_scores(fold_dir / (sys + ".tsv"), sys_scores.at(sys));
        fr.systems[sys] = make_result(sys_scores.at(sys), split, m.classes, grouping);
      }
      for (const auto& r : records) {
        prov << format_provenance(r) << '\n';
        result.provenance.push_back(r);
      }
    } catch (const Error& e) {
      fr.error = e.code() + ": " + e.what();
      fr.systems.clear();
      if (log) *log << "fold " << fold << " failed: " << *fr.error << "\n";
    }
    result.folds.push_back(std::move(fr));
  }

  for (const auto& sys : cfg.systems) {
    double s = 0;
    int n = 0;
    for (const auto& f : result.folds)
      if (auto it = f.systems.find(sys); it != f.systems.end()) {
        s += it->second.metrics.overall;
        ++n;
      }
    if (n) result.average[sys] = s / n;
  }
  write_summary(result, cfg.systems, cfg.out_dir);
  return result;
}

// ---------------------------------------------------------------------------
// MFCC parameter sweep: single-source (mean) i-vector system per grid cell
// ---------------------------------------------------------------------------

struct SweepRow {
  StreamSpec stream;
  std::vector<std::optional<double>> fold_accuracy;
  std::optional<double> average;
};

inline std::vector<StreamSpec> sweep_grid(const ExperimentConfig& cfg) {
  std::vector<StreamSpec> grid;
  for (const auto& name : cfg.sweep_streams) {
    const auto kind = StreamSpec::parse_kind(name);
    if (kind == StreamSpec::Kind::kBoosted) {
      grid.push_back({kind, cfg.mfcc.static_window_ms, 0, false});
      continue;
    }
    for (double w : cfg.sweep_windows)
      for (bool c0 : cfg.sweep_c0) grid.push_back({kind, w, cfg.sweep_coeffs, c0});
  }
  return grid;
}

inline std::vector<SweepRow> sweep_mfcc(const ExperimentConfig& cfg, const std::vector<StreamSpec>& grid,
                                        std::ostream* log = nullptr) {
  require(!grid.empty(), "config", "empty sweep grid");
  const DatasetManifest m = load_manifest(cfg.manifest);
  require(m.n_folds >= 2, "data", "cross-validation needs at least two folds");
  std::vector<FeatureRequest> reqs;
  for (const auto& g : grid) reqs.push_back({g.key(), Source::kMean, false, g});
  const FeatureStore store = compute_features(m, reqs, cfg.mfcc, cfg.spectrogram, cfg.jobs);
  std::vector<SweepRow> rows;
  for (const auto& g : grid) {
    SweepRow row{g, {}, std::nullopt};
    double s = 0;
    int n = 0;
    for (int fold = 1; fold <= m.n_folds; ++fold) {
      try {
        const auto split = split_fold(m, fold);
        const auto sc = ivector_fold_scores(m, split, store.at(g.key()), Source::kMean, cfg.ivector, cfg.seed, fold,
                                            cfg.jobs, g.key());
        const double acc = accuracy(sc.argmax(), split.test_labels);
        row.fold_accuracy.push_back(acc);
        s += acc;
        ++n;
      } catch (const Error& e) {
        if (log) *log << g.key() << " fold " << fold << " failed: " << e.what() << "\n";
        row.fold_accuracy.push_back(std::nullopt);
      }
    }
    if (n) row.average = s / n;
    if (log) *log << g.key() << ": " << format_optional(row.average) << "\n";
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_sweep(const std::vector<SweepRow>& rows) {
  std::string out = "stream\twindow_ms\tcoefficients\tc0";
  const std::size_t folds = rows.empty() ? 0 : rows.front().fold_accuracy.size();
  for (std::size_t f = 0; f < folds; ++f) out += "\tfold" + std::to_string(f + 1);
  out += "\tavg\n";
  for (const auto& r : rows) {
    const bool boosted = r.stream.kind == StreamSpec::Kind::kBoosted;
    char w[32];
    std::snprintf(w, sizeof w, "%g", r.stream.window_ms);
    out += r.stream.name() + '\t' + (boosted ? std::string("-") : std::string(w)) + '\t' +
           (boosted ? std::string("-") : std::to_string(r.stream.n_coeffs)) + '\t' +
           (boosted ? std::string("-") : std::string(r.stream.include_c0 ? "with" : "without"));
    for (const auto& a : r.fold_accuracy) out += '\t' + format_optional(a);
    out += '\t' + format_optional(r.average) + '\n';
  }
  return out;
}

}  // namespace ascm
