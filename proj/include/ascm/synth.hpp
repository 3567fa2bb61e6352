// ascm/synth.hpp

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

// Synthetic stereo scene corpus. Classes weight a shared set of noise bands
// differently and add their own tones. Every band and tone follows a slow
// random envelope; clips also vary in level and inter-channel delay.

#include <complex>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "ascm/audio.hpp"
#include "ascm/common.hpp"
#include "ascm/metrics.hpp"

namespace ascm {

struct SynthSpec {
  int n_classes = 4;
  int clips_per_class = 20;
  int n_folds = 4;
  double duration_s = 10.0;
  int sample_rate = 22050;
  std::uint64_t seed = 0;
};

struct ClassProfile {
  std::vector<double> band_hz, band_width, band_gain;
  std::vector<double> tone_hz, tone_gain;
};

// All classes draw on one pool of noise bands (shared by the dataset seed) and
// differ in how strongly each band is weighted, plus two class-specific tones.
inline ClassProfile make_class_profile(int cls, const SynthSpec& spec) {
  constexpr int kBands = 6;
  std::mt19937_64 pool(derive_seed(spec.seed, "synth.bands"));
  std::mt19937_64 rng(derive_seed(spec.seed, "synth.class", static_cast<std::uint64_t>(cls)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ClassProfile p;
  const double lo = std::log(100.0), hi = std::log(0.4 * spec.sample_rate);
  for (int b = 0; b < kBands; ++b) {
    p.band_hz.push_back(std::exp(lo + (hi - lo) * (b + u(pool)) / kBands));
    p.band_width.push_back(0.1 + 0.2 * u(pool));
    p.band_gain.push_back(std::exp(2.0 * (u(rng) - 0.5)));
  }
  for (int t = 0; t < 2; ++t) {
    p.tone_hz.push_back(std::exp(std::log(150.0) + (std::log(5000.0) - std::log(150.0)) * u(rng)));
    p.tone_gain.push_back(0.05 + 0.1 * u(rng));
  }
  return p;
}

inline StereoClip render_clip(const ClassProfile& prof, const SynthSpec& spec, std::uint64_t clip_seed,
                              std::string id) {
  std::mt19937_64 rng(clip_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::size_t n = static_cast<std::size_t>(spec.duration_s * spec.sample_rate);
  const double fs = spec.sample_rate;

  // Slow random log-amplitude envelope: a sum of three low-frequency sinusoids.
  auto envelope = [&](double depth) {
    double fr[3], ph[3];
    for (int j = 0; j < 3; ++j) {
      fr[j] = 0.3 + 2.7 * u(rng);
      ph[j] = 2.0 * std::numbers::pi * u(rng);
    }
    std::vector<double> e(n);
    for (std::size_t i = 0; i < n; ++i) {
      double v = 0.0;
      for (int j = 0; j < 3; ++j) v += std::sin(2.0 * std::numbers::pi * fr[j] * double(i) / fs + ph[j]);
      e[i] = std::exp(depth * v / 3.0);
    }
    return e;
  };

  Eigen::FFT<double> fft;
  std::vector<double> mono(n, 0.0), white(n), band;
  std::vector<std::complex<double>> X;
  // One independent noise layer per band plus a faint broadband floor (b == nb).
  const std::size_t nb = prof.band_gain.size();
  for (std::size_t b = 0; b <= nb; ++b) {
    for (auto& v : white) v = g(rng);
    fft.fwd(X, white);
    const double gain = b < nb ? prof.band_gain[b] * (0.8 + 0.4 * u(rng)) : 0.02;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t kk = std::min(k, n - k);
      double mag = gain;
      if (b < nb) {
        const double f = double(kk) * fs / double(n);
        const double z = std::log(std::max(f, 1.0) / prof.band_hz[b]) / prof.band_width[b];
        mag *= std::exp(-0.5 * z * z);
      }
      X[k] *= mag;
    }
    fft.inv(band, X);
    const auto env = b < nb ? envelope(1.5) : std::vector<double>(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) mono[i] += env[i] * band[i];
  }
  for (std::size_t t = 0; t < prof.tone_hz.size(); ++t) {
    const double f = prof.tone_hz[t] * (1.0 + 0.005 * (2.0 * u(rng) - 1.0));
    const double a = prof.tone_gain[t] * (0.8 + 0.4 * u(rng));
    const double phase = 2.0 * std::numbers::pi * u(rng);
    const auto env = envelope(2.0);
    for (std::size_t i = 0; i < n; ++i)
      mono[i] += a * env[i] * std::sin(2.0 * std::numbers::pi * f * double(i) / fs + phase);
  }
  double peak = 0.0;
  for (double v : mono) peak = std::max(peak, std::abs(v));
  const double level = (0.3 + 0.4 * u(rng)) / std::max(peak, 1e-12);
  const std::size_t delay = static_cast<std::size_t>(u(rng) * 20.0);
  const double right_gain = 0.8 + 0.4 * u(rng);

  StereoClip clip;
  clip.id = std::move(id);
  clip.sample_rate = spec.sample_rate;
  clip.left.resize(n);
  clip.right.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double l = level * mono[i];
    const double r = right_gain * level * mono[i >= delay ? i - delay : 0];
    clip.left[i] = std::clamp(l + 0.003 * g(rng), -0.99, 0.99);
    clip.right[i] = std::clamp(r + 0.003 * g(rng), -0.99, 0.99);
  }
  return clip;
}

// Writes <out>/audio/*.wav and <out>/manifest.tsv. Class labels are taken
// from the TUT 2016 scene names so the default indoor/outdoor grouping applies.
inline DatasetManifest synth_data(const SynthSpec& spec, const std::filesystem::path& out_dir, int jobs = 1) {
  require(spec.n_classes >= 1 && spec.clips_per_class >= 1, "value", "synth-data counts must be >= 1");
  require(spec.n_folds >= 1, "value", "synth-data needs at least one fold");
  require(spec.duration_s > 0 && spec.sample_rate > 0, "value", "synth-data needs positive duration and rate");
  std::filesystem::create_directories(out_dir / "audio");
  const auto& names = tut2016_labels();
  DatasetManifest m;
  m.n_folds = spec.n_folds;
  m.base_dir = out_dir;
  std::vector<ClassProfile> profiles;
  for (int c = 0; c < spec.n_classes; ++c) {
    const std::string label = c < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(c)]
                                                                   : "scene" + std::to_string(c);
    m.classes.push_back(label);
    profiles.push_back(make_class_profile(c, spec));
    for (int k = 0; k < spec.clips_per_class; ++k) {
      char id[64];
      std::snprintf(id, sizeof id, "c%02d_%04d", c, k);
      m.entries.push_back({id, std::string("audio/") + id + ".wav", label, k % spec.n_folds + 1});
    }
  }
  parallel_for(m.entries.size(), jobs, [&](std::size_t i) {
    const auto& e = m.entries[i];
    const int c = m.class_index(e.label);
    const auto clip = render_clip(profiles[static_cast<std::size_t>(c)], spec,
                                  derive_seed(spec.seed, "synth.clip", i), e.id);
    write_wav16(out_dir / e.path, clip);
  });
  write_manifest(out_dir / "manifest.tsv", m);
  return m;
}

}  // namespace ascm
