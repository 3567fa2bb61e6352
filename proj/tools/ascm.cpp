// tools/ascm.cpp

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


// Command-line driver. Every failure ends with one line
//   error: <code>: <message>
// on stderr and a nonzero exit status.

#include <iostream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ascm/ascm.hpp"

namespace fs = std::filesystem;
using namespace ascm;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = "out";
  int jobs = 1;
};

ExperimentConfig load_config(const Globals& g) {
  KeyValueConfig kv;
  if (!g.config.empty()) kv = KeyValueConfig::load(g.config);
  auto cfg = ExperimentConfig::from(kv);
  if (g.seed_set) cfg.seed = g.seed;
  cfg.jobs = g.jobs;
  return cfg;
}

std::set<int> parse_folds(const std::string& s) {
  std::set<int> out;
  if (s.empty()) return out;
  for (const auto& part : split(s, ',')) {
    const double d = parse_double(trim(part), "fold list");
    require(d >= 1 && d == std::floor(d), "value", "fold indices must be positive integers");
    out.insert(static_cast<int>(d));
  }
  return out;
}

// Manifest entries restricted by --folds / --exclude-folds.
struct Selection {
  DatasetManifest manifest;
  std::vector<std::size_t> idx;

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (auto i : idx) out.push_back(manifest.entries[i].id);
    return out;
  }
  std::vector<int> labels() const {
    const auto all = manifest.label_indices();
    std::vector<int> out;
    for (auto i : idx) out.push_back(all[i]);
    return out;
  }
};

struct SelectArgs {
  std::string manifest;
  std::string folds;
  std::string exclude;

  void add(CLI::App* app) {
    app->add_option("--manifest", manifest, "dataset manifest (TSV)")->required();
    app->add_option("--folds", folds, "use only these folds, e.g. 1,2");
    app->add_option("--exclude-folds", exclude, "skip these folds");
  }

  Selection select() const {
    Selection s{load_manifest(manifest), {}};
    const auto keep = parse_folds(folds), drop = parse_folds(exclude);
    for (std::size_t i = 0; i < s.manifest.entries.size(); ++i) {
      const int f = s.manifest.entries[i].fold;
      if ((keep.empty() || keep.count(f)) && !drop.count(f)) s.idx.push_back(i);
    }
    require(!s.idx.empty(), "data", "fold selection is empty");
    return s;
  }
};

fs::path feature_path(const fs::path& dir, const std::string& id) { return dir / (id + ".feat"); }

std::vector<FeatureMatrix> read_selected_features(const fs::path& dir, const Selection& s) {
  std::vector<FeatureMatrix> out;
  for (auto i : s.idx) out.push_back(read_features(feature_path(dir, s.manifest.entries[i].id)));
  return out;
}

std::vector<const FeatureMatrix*> pointers(const std::vector<FeatureMatrix>& v) {
  std::vector<const FeatureMatrix*> p;
  for (const auto& f : v) p.push_back(&f);
  return p;
}

std::vector<int> labels_for(const DatasetManifest& m, const std::vector<std::string>& ids) {
  std::vector<int> out;
  for (const auto& id : ids) out.push_back(m.class_index(m.find(id).label));
  return out;
}

std::vector<ScoreMatrix> read_score_list(const std::vector<std::string>& paths) {
  std::vector<ScoreMatrix> sets;
  for (const auto& p : paths) sets.push_back(read_scores(p));
  return sets;
}

void say(const std::string& s) { std::cout << s << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acoustic scene classification toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "experiment config file");
  app.add_option("--seed", g.seed, "root random seed")->each([&](const std::string&) { g.seed_set = true; });
  app.add_option("--out", g.out, "output directory");
  app.add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber);

  // features
  auto* features = app.add_subcommand("features", "compute per-clip feature files");
  SelectArgs feat_sel;
  feat_sel.add(features);
  std::string feat_kind = "boosted", feat_source = "mean";
  double feat_window = 20;
  int feat_coeffs = 20;
  bool feat_no_c0 = false;
  features->add_option("--kind", feat_kind, "boosted|standard|static|delta|double_delta|spectrogram");
  features->add_option("--source", feat_source, "left|right|mean|diff");
  features->add_option("--window-ms", feat_window, "analysis window for non-boosted MFCC streams");
  features->add_option("--coefficients", feat_coeffs, "cepstral coefficients for non-boosted streams");
  features->add_flag("--no-c0", feat_no_c0, "drop c0 from non-boosted streams");

  // train-ubm
  auto* train_ubm_cmd = app.add_subcommand("train-ubm", "train a diagonal GMM-UBM");
  SelectArgs ubm_sel;
  ubm_sel.add(train_ubm_cmd);
  std::string ubm_feats;
  train_ubm_cmd->add_option("--features", ubm_feats, "feature directory")->required();

  // train-tv
  auto* train_tv_cmd = app.add_subcommand("train-tv", "train the total-variability matrix");
  SelectArgs tv_sel;
  tv_sel.add(train_tv_cmd);
  std::string tv_feats, tv_ubm;
  train_tv_cmd->add_option("--features", tv_feats, "feature directory")->required();
  train_tv_cmd->add_option("--ubm", tv_ubm, "UBM model")->required();

  // extract-ivectors
  auto* extract_cmd = app.add_subcommand("extract-ivectors", "extract length-normalised i-vectors");
  SelectArgs ex_sel;
  ex_sel.add(extract_cmd);
  std::string ex_feats, ex_ubm, ex_tv, ex_source = "mean";
  extract_cmd->add_option("--features", ex_feats, "feature directory")->required();
  extract_cmd->add_option("--ubm", ex_ubm, "UBM model")->required();
  extract_cmd->add_option("--tv", ex_tv, "T-matrix model")->required();
  extract_cmd->add_option("--source", ex_source, "source tag stored with the i-vectors");

  // train-backend
  auto* backend_cmd = app.add_subcommand("train-backend", "train LDA/WCCN and class models");
  SelectArgs be_sel;
  be_sel.add(backend_cmd);
  std::string be_ivectors;
  backend_cmd->add_option("--ivectors", be_ivectors, "i-vector file")->required();

  // score
  auto* score_cmd = app.add_subcommand("score", "cosine-score i-vectors");
  SelectArgs sc_sel;
  sc_sel.add(score_cmd);
  std::vector<std::string> sc_ivectors;
  std::string sc_backend, sc_tag = "ivector";
  score_cmd->add_option("--ivectors", sc_ivectors, "i-vector files; several are averaged after scoring")
      ->required()
      ->delimiter(',');
  score_cmd->add_option("--backend", sc_backend, "backend model (one per i-vector file, comma separated)")
      ->required();
  score_cmd->add_option("--tag", sc_tag, "score set tag");

  // train-cnn
  auto* train_cnn_cmd = app.add_subcommand("train-cnn", "train the CNN on spectrogram excerpts");
  SelectArgs cnn_sel;
  cnn_sel.add(train_cnn_cmd);
  std::string cnn_feats;
  train_cnn_cmd->add_option("--features", cnn_feats, "spectrogram directory")->required();

  // score-cnn
  auto* score_cnn_cmd = app.add_subcommand("score-cnn", "clip scores from a trained CNN");
  SelectArgs scnn_sel;
  scnn_sel.add(score_cnn_cmd);
  std::string scnn_feats, scnn_model;
  score_cnn_cmd->add_option("--features", scnn_feats, "spectrogram directory")->required();
  score_cnn_cmd->add_option("--cnn", scnn_model, "CNN checkpoint")->required();

  // train-fusion
  auto* train_fusion_cmd = app.add_subcommand("train-fusion", "train linear-logistic fusion");
  std::vector<std::string> tf_scores;
  std::string tf_manifest;
  train_fusion_cmd->add_option("--scores", tf_scores, "score files, comma separated")->required()->delimiter(',');
  train_fusion_cmd->add_option("--manifest", tf_manifest, "manifest with the true labels")->required();

  // fuse
  auto* fuse_cmd = app.add_subcommand("fuse", "apply one or more fusion models (bagged)");
  std::vector<std::string> fu_scores, fu_models;
  fuse_cmd->add_option("--scores", fu_scores, "score files, comma separated")->required()->delimiter(',');
  fuse_cmd->add_option("--fusion", fu_models, "fusion models, comma separated")->required()->delimiter(',');

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "accuracy of a score file");
  std::string ev_scores, ev_manifest;
  evaluate_cmd->add_option("--scores", ev_scores, "score file")->required();
  evaluate_cmd->add_option("--manifest", ev_manifest, "manifest with the true labels")->required();

  // run-cv
  auto* run_cv_cmd = app.add_subcommand("run-cv", "cross-validated experiment from a config");
  std::string cv_manifest;
  run_cv_cmd->add_option("--manifest", cv_manifest, "overrides the config's manifest");

  // sweep-mfcc
  auto* sweep_cmd = app.add_subcommand("sweep-mfcc", "MFCC parameter sweep with the single-source system");
  std::string sw_manifest;
  sweep_cmd->add_option("--manifest", sw_manifest, "overrides the config's manifest");

  // synth-data
  auto* synth_cmd = app.add_subcommand("synth-data", "generate a synthetic stereo scene dataset");
  SynthSpec synth;
  synth_cmd->add_option("--classes", synth.n_classes, "number of classes")->check(CLI::Range(1, 15));
  synth_cmd->add_option("--clips", synth.clips_per_class, "clips per class")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--folds", synth.n_folds, "folds")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--duration", synth.duration_s, "clip length in seconds")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    const fs::path out(g.out);
    auto cfg = load_config(g);

    if (*features) {
      const auto sel = feat_sel.select();
      const Source src = parse_source(feat_source);
      FeatureRequest req{"x", src, feat_kind == "spectrogram", {}};
      if (!req.spectrogram) req.stream = {StreamSpec::parse_kind(feat_kind), feat_window, feat_coeffs, !feat_no_c0};
      parallel_for(sel.idx.size(), cfg.jobs, [&](std::size_t k) {
        const auto& e = sel.manifest.entries[sel.idx[k]];
        const auto sources = derive_sources(load_wav(sel.manifest.resolve(e), e.id));
        const auto& sig = sources.get(src);
        const FeatureMatrix f = req.spectrogram ? log_mel_spectrogram(sig, sources.sample_rate, cfg.spectrogram)
                                                : compute_stream(sig, sources.sample_rate, req.stream, cfg.mfcc);
        write_features(feature_path(out, e.id), f);
      });
      say("wrote " + std::to_string(sel.idx.size()) + " feature files to " + out.string());
    } else if (*train_ubm_cmd) {
      const auto sel = ubm_sel.select();
      const auto feats = read_selected_features(ubm_feats, sel);
      EmConfig em = cfg.ivector.em;
      em.seed = derive_seed(cfg.seed, "ubm");
      UbmReport rep;
      const auto ubm = train_ubm(pool_frames(pointers(feats)), cfg.ivector.ubm_components, em, &rep);
      ubm_to_container(ubm, "trained_on=" + join(sel.ids(), ',')).save(out / "ubm.ascm");
      say("ubm: " + std::to_string(ubm.n_components()) + " components, " + std::to_string(rep.iterations) +
          " iterations, " + std::to_string(rep.reseeded.size()) + " re-seeded");
    } else if (*train_tv_cmd) {
      const auto sel = tv_sel.select();
      const auto feats = read_selected_features(tv_feats, sel);
      const auto ubm = ubm_from_container(Container::load(tv_ubm));
      std::vector<SuffStats> stats(feats.size());
      parallel_for(feats.size(), cfg.jobs, [&](std::size_t i) { stats[i] = accumulate_stats(ubm, feats[i]); });
      TvConfig tv = cfg.ivector.tv;
      tv.seed = derive_seed(cfg.seed, "tv");
      tv.jobs = cfg.jobs;
      TvReport rep;
      const auto tm = train_total_variability(stats, ubm, tv, &rep);
      tmatrix_to_container(tm, "trained_on=" + join(sel.ids(), ',')).save(out / "tv.ascm");
      for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
      say("tv: rank " + std::to_string(tm.rank()));
    } else if (*extract_cmd) {
      const auto sel = ex_sel.select();
      const auto feats = read_selected_features(ex_feats, sel);
      IvectorSystem sys;
      sys.ubm = ubm_from_container(Container::load(ex_ubm));
      sys.tm = tmatrix_from_container(Container::load(ex_tv));
      IvectorSet set{sys.extract(pointers(feats), cfg.jobs), sel.ids(), ex_source};
      ivectors_to_container(set).save(out / ("ivectors_" + ex_source + ".ascm"));
      say("extracted " + std::to_string(set.ids.size()) + " i-vectors");
    } else if (*backend_cmd) {
      const auto sel = be_sel.select();
      const auto all = ivectors_from_container(Container::load(be_ivectors));
      // Keep only i-vectors of the selected clips, in manifest order.
      std::map<std::string, Eigen::Index> row;
      for (std::size_t i = 0; i < all.ids.size(); ++i) row[all.ids[i]] = static_cast<Eigen::Index>(i);
      const auto ids = sel.ids();
      Matrix x(static_cast<Eigen::Index>(ids.size()), all.y.cols());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        auto it = row.find(ids[i]);
        require(it != row.end(), "data", "no i-vector for clip '" + ids[i] + "'");
        x.row(static_cast<Eigen::Index>(i)) = all.y.row(it->second);
      }
      const auto be = train_backend(x, sel.labels(), sel.manifest.classes, cfg.ivector.lda_dims);
      backend_to_container(be, "trained_on=" + join(ids, ',')).save(out / "backend.ascm");
      say("backend: " + std::to_string(be.projection.lda.cols()) + " dims");
    } else if (*score_cmd) {
      const auto sel = sc_sel.select();
      const auto backends = split(sc_backend, ',');
      require(backends.size() == sc_ivectors.size(), "value", "need one --backend per --ivectors file");
      std::vector<ScoreMatrix> per;
      const auto ids = sel.ids();
      for (std::size_t k = 0; k < sc_ivectors.size(); ++k) {
        const auto set = ivectors_from_container(Container::load(sc_ivectors[k]));
        const auto be = backend_from_container(Container::load(backends[k]));
        std::map<std::string, Eigen::Index> row;
        for (std::size_t i = 0; i < set.ids.size(); ++i) row[set.ids[i]] = static_cast<Eigen::Index>(i);
        Matrix x(static_cast<Eigen::Index>(ids.size()), set.y.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) {
          auto it = row.find(ids[i]);
          require(it != row.end(), "data", "no i-vector for clip '" + ids[i] + "'");
          x.row(static_cast<Eigen::Index>(i)) = set.y.row(it->second);
        }
        per.push_back(be.score(x, ids, sc_tag));
      }
      auto s = per.size() == 1 ? per.front() : average_channel_scores(per);
      s.tag = sc_tag;
      write_scores(out / (sc_tag + ".tsv"), s);
      say("scored " + std::to_string(ids.size()) + " clips");
    } else if (*train_cnn_cmd) {
      const auto sel = cnn_sel.select();
      const auto specs = read_selected_features(cnn_feats, sel);
      std::vector<std::size_t> all(specs.size());
      std::iota(all.begin(), all.end(), 0);
      std::vector<Matrix> patches;
      std::vector<int> labels;
      const auto& cc = cfg.cnn;
      collect_excerpts(specs, all, sel.labels(), static_cast<std::size_t>(cc.excerpt_width),
                       static_cast<std::size_t>(cc.train_stride), patches, labels);
      require(!specs.empty(), "data", "no spectrograms");
      const cnn::Shape input{1, static_cast<int>(specs.front().dims()), cc.excerpt_width};
      auto net = cnn::Network<float>::build(cc.architecture(static_cast<int>(sel.manifest.classes.size())), input,
                                            derive_seed(cfg.seed, "cnn.init"));
      cnn::TrainConfig tc = cc.train;
      tc.seed = derive_seed(cfg.seed, "cnn.train");
      const auto rep = cnn::train(net, patches, labels, tc);
      auto c = net.to_container();
      c.set_text("classes", join(sel.manifest.classes, '\n'));
      c.set_text("trained_on", join(sel.ids(), ','));
      c.save(out / "cnn.ascm");
      say("cnn: " + std::to_string(patches.size()) + " excerpts, final loss " +
          (rep.epoch_loss.empty() ? std::string("NA") : format_double(rep.epoch_loss.back())));
    } else if (*score_cnn_cmd) {
      const auto sel = scnn_sel.select();
      const auto c = Container::load(scnn_model);
      auto net = cnn::Network<float>::from_container(c);
      const auto specs = read_selected_features(scnn_feats, sel);
      ScoreMatrix s;
      s.tag = "VGG";
      s.classes = c.has_text("classes") ? split(c.text("classes"), '\n') : sel.manifest.classes;
      s.ids = sel.ids();
      s.scores.resize(static_cast<Eigen::Index>(specs.size()), static_cast<Eigen::Index>(s.classes.size()));
      for (std::size_t k = 0; k < specs.size(); ++k)
        s.scores.row(static_cast<Eigen::Index>(k)) =
            cnn::predict_clip(net, specs[k], static_cast<std::size_t>(cfg.cnn.excerpt_width),
                              static_cast<std::size_t>(cfg.cnn.test_stride), s.ids[k])
                .log_scores()
                .transpose();
      write_scores(out / "VGG.tsv", s);
      say("scored " + std::to_string(specs.size()) + " clips");
    } else if (*train_fusion_cmd) {
      const auto sets = read_score_list(tf_scores);
      const auto m = load_manifest(tf_manifest);
      FusionReport rep;
      const auto model = train_fusion(sets, labels_for(m, sets.front().ids), cfg.fusion, &rep);
      model.to_container().save(out / "fusion.ascm");
      say("fusion: objective " + (rep.objective_trace.empty() ? std::string("NA") : format_double(rep.objective_trace.back())));
    } else if (*fuse_cmd) {
      const auto sets = read_score_list(fu_scores);
      std::vector<FusionModel> models;
      for (const auto& p : fu_models) models.push_back(FusionModel::from_container(Container::load(p)));
      const auto fused = models.size() == 1 ? fuse_scores(models.front(), sets) : bag_fold_fusions(models, sets);
      write_scores(out / "fused.tsv", fused);
      say("fused " + std::to_string(fused.ids.size()) + " clips");
    } else if (*evaluate_cmd) {
      const auto s = read_scores(ev_scores);
      const auto m = load_manifest(ev_manifest);
      // Score columns may be in any order; map them onto the manifest's classes.
      std::vector<int> pred;
      for (int p : s.argmax()) pred.push_back(m.class_index(s.classes[static_cast<std::size_t>(p)]));
      const auto metrics = evaluate(pred, labels_for(m, s.ids), m.classes, grouping_for(cfg, m.classes));
      say("accuracy\t" + format_percent(metrics.overall));
      if (metrics.indoor) say("indoor\t" + format_percent(*metrics.indoor));
      if (metrics.outdoor) say("outdoor\t" + format_percent(*metrics.outdoor));
      for (std::size_t c = 0; c < m.classes.size(); ++c)
        say("class\t" + m.classes[c] + '\t' + format_optional(metrics.per_class[c]));
    } else if (*run_cv_cmd || *sweep_cmd) {
      const std::string& manifest = *run_cv_cmd ? cv_manifest : sw_manifest;
      if (!manifest.empty()) cfg.manifest = manifest;
      require(!cfg.manifest.empty(), "config", "no manifest given (config key 'manifest' or --manifest)");
      if (app.get_option("--out")->count() > 0 || g.config.empty()) cfg.out_dir = out;
      if (*run_cv_cmd) {
        const auto r = run_cv(cfg, &std::cerr);
        std::cout << read_file_bytes(cfg.out_dir / "summary.txt");
        for (const auto& f : r.folds)
          if (f.error) fail("fold", "fold " + std::to_string(f.fold) + " failed: " + *f.error);
      } else {
        const auto rows = sweep_mfcc(cfg, sweep_grid(cfg), &std::cerr);
        const std::string table = format_sweep(rows);
        detail::write_bytes(cfg.out_dir / "sweep.tsv", table);
        std::cout << table;
      }
    } else if (*synth_cmd) {
      synth.seed = cfg.seed;
      const auto m = synth_data(synth, out, cfg.jobs);
      say("wrote " + std::to_string(m.entries.size()) + " clips and " + (out / "manifest.tsv").string());
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
