// tests/test_pipeline.cpp

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

#include <gtest/gtest.h>

#include <set>

#include "ascm/ascm.hpp"
#include "test_util.hpp"

using namespace ascm;

TEST(Metrics, Examples) {
  const std::vector<std::string> classes = {"beach", "bus"};
  const auto all = evaluate({0, 1, 1}, {0, 1, 1}, classes, SceneGrouping::tut2016());
  EXPECT_DOUBLE_EQ(all.overall, 100.0);
  EXPECT_DOUBLE_EQ(*all.outdoor, 100.0);
  EXPECT_DOUBLE_EQ(*all.indoor, 100.0);

  const auto m = evaluate({0, 1, 1, 1}, {0, 1, 1, 0}, classes, SceneGrouping::tut2016());
  EXPECT_DOUBLE_EQ(m.overall, 75.0);
  EXPECT_DOUBLE_EQ(*m.per_class[0], 50.0);
  EXPECT_DOUBLE_EQ(*m.per_class[1], 100.0);
  EXPECT_DOUBLE_EQ(*m.outdoor, 50.0);

  const auto indoor_only = evaluate({1, 1}, {1, 1}, classes, SceneGrouping::tut2016());
  EXPECT_FALSE(indoor_only.outdoor.has_value());
  EXPECT_FALSE(indoor_only.per_class[0].has_value());
  EXPECT_THROW(evaluate({0}, {0}, {"nowhere"}, SceneGrouping::tut2016()), Error);
}

TEST(Metrics, TutGroupingCoversAllLabels) {
  const auto g = SceneGrouping::tut2016();
  EXPECT_TRUE(g.covers(tut2016_labels()));
  EXPECT_EQ(g.indoor.size(), 10u);
  EXPECT_EQ(g.outdoor.size(), 5u);
}

TEST(Provenance, RoundTrip) {
  const ProvenanceRecord r{3, "ubm.left", {"a", "b/c", "d\"e"}};
  const std::string line = format_provenance(r);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  const auto back = parse_provenance(line);
  EXPECT_EQ(back.fold, 3);
  EXPECT_EQ(back.model, "ubm.left");
  EXPECT_EQ(back.trained_on, r.trained_on);
}

TEST(Provenance, LeakageIsDetected) {
  DatasetManifest m;
  m.n_folds = 2;
  m.classes = {"beach"};
  m.entries = {{"x", "x.wav", "beach", 1}, {"y", "y.wav", "beach", 2}};
  EXPECT_NO_THROW(check_no_leakage({{1, "ubm.mean", {"y"}}}, m));
  try {
    check_no_leakage({{1, "ubm.mean", {"y", "x"}}}, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "leakage");
  }
}

TEST(Config, Parsing) {
  auto kv = KeyValueConfig::parse("seed = 9\nsystems = SMB, VGG\n[ubm]\ncomponents = 8\n[cnn]\narch = compact\n");
  const auto c = ExperimentConfig::from(kv);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.systems, (std::vector<std::string>{"SMB", "VGG"}));
  EXPECT_EQ(c.ivector.ubm_components, 8);
  EXPECT_EQ(c.cnn.arch, "compact");
  EXPECT_TRUE(c.needs_cnn());
  EXPECT_FALSE(c.needs_multichannel());
}

TEST(Config, Errors) {
  auto code = [](const std::string& text) {
    try {
      ExperimentConfig::from(KeyValueConfig::parse(text));
    } catch (const Error& e) {
      return e.code();
    }
    return std::string("ok");
  };
  EXPECT_EQ(code("ubm.componets = 3\n"), "config");
  EXPECT_EQ(code("systems = SMB, XYZ\n"), "config");
  EXPECT_EQ(code("seed = -1\n"), "config");
  EXPECT_EQ(code("grouping.indoor = bus\ngrouping.outdoor = bus\n"), "config");
  EXPECT_EQ(code("sweep.c0 = maybe\n"), "config");
  EXPECT_EQ(code("cnn.batch_size = 0\n"), "config");
  EXPECT_EQ(code("seed = 1\n"), "ok");
}

TEST(Synth, CountsFoldsAndDeterminism) {
  const auto dir = test::scratch("synth_counts");
  SynthSpec spec;
  spec.n_classes = 3;
  spec.clips_per_class = 5;
  spec.n_folds = 2;
  spec.duration_s = 0.5;
  spec.seed = 4;
  const auto m = synth_data(spec, dir / "a");
  ASSERT_EQ(m.entries.size(), 15u);
  std::map<int, int> per_fold;
  for (const auto& e : m.entries) {
    ++per_fold[e.fold];
    EXPECT_TRUE(std::filesystem::exists(dir / "a" / e.path));
  }
  EXPECT_EQ(per_fold[1], 9);
  EXPECT_EQ(per_fold[2], 6);
  const auto back = load_manifest(dir / "a" / "manifest.tsv");
  EXPECT_EQ(back.classes, m.classes);
  EXPECT_EQ(back.n_folds, 2);

  synth_data(spec, dir / "b", 2);
  spec.seed = 5;
  synth_data(spec, dir / "c");
  const auto& id = m.entries[7].path;
  EXPECT_EQ(test::slurp(dir / "a" / id), test::slurp(dir / "b" / id));
  EXPECT_NE(test::slurp(dir / "a" / id), test::slurp(dir / "c" / id));

  const auto clip = load_wav(dir / "a" / id, "x");
  EXPECT_EQ(clip.sample_rate, 22050);
  EXPECT_EQ(clip.left.size(), 11025u);
}

TEST(Sweep, GridShape) {
  ExperimentConfig c;
  EXPECT_EQ(sweep_grid(c).size(), 18u);
  c.sweep_streams = {"boosted", "static", "delta"};
  c.sweep_windows = {20};
  c.sweep_c0 = {true};
  const auto g = sweep_grid(c);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_EQ(g[0].kind, StreamSpec::Kind::kBoosted);
  EXPECT_EQ(g[2].kind, StreamSpec::Kind::kDelta);
  EXPECT_THROW(StreamSpec::parse_kind("triple_delta"), Error);
}

// One small corpus shared by the end-to-end tests.
class EndToEnd : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = test::scratch("pipeline_e2e");
    SynthSpec spec;
    spec.n_classes = 3;
    spec.clips_per_class = 6;
    spec.n_folds = 2;
    spec.duration_s = 2.0;
    spec.seed = 1;
    manifest_ = synth_data(spec, root_ / "data");
    first_ = new CvResult(run_cv(config(root_ / "run1")));
  }
  static void TearDownTestSuite() { delete first_; }

  static ExperimentConfig config(const std::filesystem::path& out, int jobs = 1) {
    auto c = ExperimentConfig::from(KeyValueConfig::parse(test::tiny_config(root_ / "data" / "manifest.tsv", out)));
    c.jobs = jobs;
    return c;
  }

  static inline std::filesystem::path root_;
  static inline DatasetManifest manifest_;
  static inline CvResult* first_ = nullptr;
};

TEST_F(EndToEnd, EveryFoldProducesEverySystem) {
  ASSERT_EQ(first_->folds.size(), 2u);
  for (const auto& f : first_->folds) {
    EXPECT_FALSE(f.error.has_value()) << *f.error;
    for (const auto& s : all_systems()) {
      ASSERT_TRUE(f.systems.count(s)) << s;
      const auto& r = f.systems.at(s);
      EXPECT_EQ(r.scores.ids, f.test_ids);
      EXPECT_TRUE(r.scores.scores.allFinite());
      EXPECT_TRUE(std::filesystem::exists(root_ / "run1" / ("fold" + std::to_string(f.fold)) / (s + ".tsv")));
    }
    for (const char* src : {"left", "right", "mean", "diff"})
      EXPECT_TRUE(std::filesystem::exists(root_ / "run1" / ("fold" + std::to_string(f.fold)) /
                                          (std::string("ivector_") + src + ".tsv")));
  }
  for (const char* f : {"summary.tsv", "classwise.tsv", "groups.tsv", "summary.txt", "provenance.jsonl"})
    EXPECT_TRUE(std::filesystem::exists(root_ / "run1" / f)) << f;
}

TEST_F(EndToEnd, NoModelScoringAFoldSawThatFold) {
  std::ifstream in(root_ / "run1" / "provenance.jsonl");
  std::string line;
  int n = 0;
  std::set<std::string> models;
  while (std::getline(in, line)) {
    const auto r = parse_provenance(line);
    models.insert(r.model);
    ++n;
    const bool fusion = r.model.rfind("fusion.", 0) == 0;
    for (const auto& id : r.trained_on) {
      if (fusion)
        EXPECT_EQ(manifest_.find(id).fold, r.fold);
      else
        EXPECT_NE(manifest_.find(id).fold, r.fold) << r.model;
    }
  }
  EXPECT_EQ(n, static_cast<int>(first_->provenance.size()));
  EXPECT_TRUE(models.count("cnn"));
  EXPECT_TRUE(models.count("ubm.diff"));
  EXPECT_TRUE(models.count("fusion.HYB"));
}

TEST_F(EndToEnd, SmbIsTheMeanSourceIvectorSystem) {
  for (const auto& f : first_->folds) {
    const auto iv = read_scores(root_ / "run1" / ("fold" + std::to_string(f.fold)) / "ivector_mean.tsv");
    EXPECT_EQ(iv.scores, f.systems.at("SMB").scores.scores);
  }
}

TEST_F(EndToEnd, RerunIsByteIdenticalForAnyJobCount) {
  run_cv(config(root_ / "run2", 3));
  for (const char* f : {"summary.tsv", "classwise.tsv", "groups.tsv", "summary.txt", "provenance.jsonl",
                        "fold1/HYB.tsv", "fold2/VGG.tsv", "fold2/ivector_diff.tsv"})
    EXPECT_EQ(test::slurp(root_ / "run1" / f), test::slurp(root_ / "run2" / f)) << f;
}

TEST_F(EndToEnd, SweepBoostedCellReproducesSmb) {
  auto c = config(root_ / "sweep");
  c.sweep_streams = {"boosted", "static", "double_delta"};
  c.sweep_windows = {40};
  c.sweep_c0 = {false};
  const auto rows = sweep_mfcc(c, sweep_grid(c));
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t f = 0; f < 2; ++f)
    EXPECT_EQ(rows[0].fold_accuracy[f], first_->folds[f].systems.at("SMB").metrics.overall);
  const std::string table = format_sweep(rows);
  EXPECT_EQ(table.substr(0, table.find('\n')), "stream\twindow_ms\tcoefficients\tc0\tfold1\tfold2\tavg");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 4);
}

TEST_F(EndToEnd, MissingManifestIsAnError) {
  auto c = config(root_ / "missing");
  c.manifest = root_ / "nope.tsv";
  EXPECT_THROW(run_cv(c), Error);
}
