// ascm/features.hpp

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
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "ascm/common.hpp"

namespace ascm {

// frames x dims acoustic features.
struct FeatureMatrix {
  Matrix data;
  double frame_rate = 0.0;

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index dims() const { return data.cols(); }

  void validate() const {
    require(data.rows() >= 1, "shape", "feature matrix has no frames");
    require(data.allFinite(), "value", "feature matrix has non-finite entries");
  }
};

struct MfccConfig {
  double frame_ms = 20.0;  // base frame; frames never overlap
  double static_window_ms = 20.0;
  double delta_window_ms = 60.0;
  int n_static = 23;
  int n_delta = 18;
  int n_double_delta = 20;
  int n_mel_filters = 30;
  double fmin_hz = 0.0;
  double fmax_hz = 11000.0;
  bool include_c0_static = false;
  bool include_c0_dynamic = true;
  int delta_span = 2;
  double log_floor = 1e-10;

  void validate() const {
    require(frame_ms > 0, "config", "mfcc.frame_ms must be positive");
    require(static_window_ms >= frame_ms && delta_window_ms >= frame_ms, "config",
            "mfcc observation windows must be at least one frame long");
    require(static_window_ms <= delta_window_ms, "config",
            "mfcc.static_window_ms must not exceed mfcc.delta_window_ms");
    const int need_static = n_static + (include_c0_static ? 0 : 1);
    const int need_dyn = std::max(n_delta, n_double_delta) + (include_c0_dynamic ? 0 : 1);
    require(n_mel_filters >= std::max(need_static, need_dyn), "config",
            "mfcc.n_mel_filters smaller than the coefficient count");
    require(n_static >= 0 && n_delta >= 0 && n_double_delta >= 0, "config",
            "mfcc coefficient counts must be non-negative");
    require(fmin_hz >= 0 && fmin_hz < fmax_hz, "config", "mfcc passband must satisfy fmin < fmax");
    require(delta_span >= 1, "config", "mfcc.delta_span must be >= 1");
    require(log_floor > 0, "config", "mfcc.log_floor must be positive");
  }
};

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Periodic raised-cosine (Hann) taper.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
  return w;
}

// |X_k|^2 for k = 0..nfft/2 of the zero-padded input.
inline std::vector<double> power_spectrum(const std::vector<double>& frame, std::size_t nfft) {
  std::vector<double> padded(nfft, 0.0);
  std::copy_n(frame.begin(), std::min(frame.size(), nfft), padded.begin());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, padded);
  std::vector<double> out(nfft / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::norm(spec[k]);
  return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters with unit peak, equally spaced on the mel scale over
// [fmin, fmax]. Triangles are linear in mel, so between the first and the last
// centre frequency the filter responses sum to one at every bin.
class MelFilterbank {
 public:
  MelFilterbank(int n_filters, std::size_t nfft, double fs, double fmin, double fmax)
      : nfft_(nfft), fs_(fs) {
    require(n_filters >= 1, "config", "filterbank needs at least one filter");
    fmax = std::min(fmax, fs / 2.0);
    require(fmin < fmax, "config", "filterbank passband is empty after Nyquist clamp");
    const double mlo = hz_to_mel(fmin), mhi = hz_to_mel(fmax);
    edges_mel_.resize(n_filters + 2);
    for (int i = 0; i < n_filters + 2; ++i)
      edges_mel_[i] = mlo + (mhi - mlo) * double(i) / double(n_filters + 1);
    const std::size_t n_bins = nfft / 2 + 1;
    weights_ = Matrix::Zero(n_filters, static_cast<Eigen::Index>(n_bins));
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double mel = hz_to_mel(double(k) * fs / double(nfft));
      for (int m = 0; m < n_filters; ++m) {
        const double lo = edges_mel_[m], c = edges_mel_[m + 1], hi = edges_mel_[m + 2];
        double w = 0.0;
        if (mel > lo && mel <= c)
          w = (mel - lo) / (c - lo);
        else if (mel > c && mel < hi)
          w = (hi - mel) / (hi - c);
        weights_(m, static_cast<Eigen::Index>(k)) = w;
      }
    }
  }

  const Matrix& weights() const { return weights_; }
  int size() const { return static_cast<int>(weights_.rows()); }
  double center_hz(int m) const { return mel_to_hz(edges_mel_[m + 1]); }
  double bin_hz(std::size_t k) const { return double(k) * fs_ / double(nfft_); }

  Vector apply(const std::vector<double>& power) const {
    Eigen::Map<const Vector> p(power.data(), static_cast<Eigen::Index>(power.size()));
    return weights_ * p;
  }

 private:
  std::size_t nfft_;
  double fs_;
  std::vector<double> edges_mel_;
  Matrix weights_;
};

// Orthonormal DCT-II matrix, rows = output coefficients.
inline Matrix dct2_matrix(int n_out, int n_in) {
  Matrix d(n_out, n_in);
  for (int k = 0; k < n_out; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n_in) : std::sqrt(2.0 / n_in);
    for (int m = 0; m < n_in; ++m)
      d(k, m) = scale * std::cos(std::numbers::pi * k * (m + 0.5) / n_in);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Framing
// ---------------------------------------------------------------------------

struct Slice {
  long start;  // may be negative; samples outside the signal are edge-replicated
  std::size_t length;
  friend bool operator==(const Slice&, const Slice&) = default;
};

inline std::size_t ms_to_samples(double ms, double fs) {
  return static_cast<std::size_t>(std::llround(ms * fs / 1000.0));
}

// One slice per non-overlapping base frame of `frame_ms`; each observation
// window of `window_ms` is centred on its base frame. The slice count does not
// depend on window_ms.
inline std::vector<Slice> frame_slices(std::size_t n_samples, double fs, double window_ms,
                                       double frame_ms) {
  require(fs > 0 && frame_ms > 0, "value", "frame_slices needs positive rate and frame length");
  require(window_ms >= frame_ms, "value", "observation window shorter than base frame");
  const std::size_t frame_len = ms_to_samples(frame_ms, fs);
  const std::size_t win_len = ms_to_samples(window_ms, fs);
  require(frame_len >= 1, "value", "base frame shorter than one sample");
  const std::size_t n_frames = n_samples / frame_len;
  if (n_frames == 0) fail("shape", "signal shorter than one base frame");
  const long pre = static_cast<long>((win_len - frame_len) / 2);
  std::vector<Slice> out;
  out.reserve(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i)
    out.push_back({static_cast<long>(i * frame_len) - pre, win_len});
  return out;
}

inline std::vector<double> gather_slice(const std::vector<double>& signal, const Slice& s) {
  std::vector<double> out(s.length);
  const long last = static_cast<long>(signal.size()) - 1;
  for (std::size_t i = 0; i < s.length; ++i) {
    const long j = std::clamp(s.start + static_cast<long>(i), 0L, last);
    out[i] = signal[static_cast<std::size_t>(j)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// MFCC
// ---------------------------------------------------------------------------

// Log mel energies log(E_m + floor) of one tapered observation window.
inline Vector mel_log_energies(const std::vector<double>& window, double fs,
                               const MfccConfig& cfg) {
  const std::size_t nfft = next_pow2(window.size());
  const auto taper = hann_window(window.size());
  std::vector<double> x(window.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = window[i] * taper[i];
  MelFilterbank fb(cfg.n_mel_filters, nfft, fs, cfg.fmin_hz, cfg.fmax_hz);
  Vector e = fb.apply(power_spectrum(x, nfft));
  return (e.array() + cfg.log_floor).log().matrix();
}

inline FeatureMatrix extract_mfcc(const std::vector<double>& signal, double fs, double window_ms,
                                  int n_coeffs, bool include_c0, const MfccConfig& cfg) {
  if (signal.empty()) fail("shape", "empty signal");
  require(n_coeffs >= 1, "config", "n_coeffs must be >= 1");
  const int first = include_c0 ? 0 : 1;
  require(first + n_coeffs <= cfg.n_mel_filters, "config",
          "requested more cepstral coefficients than mel filters");
  const auto slices = frame_slices(signal.size(), fs, window_ms, cfg.frame_ms);
  const std::size_t win_len = slices.front().length;
  const std::size_t nfft = next_pow2(win_len);
  const auto taper = hann_window(win_len);
  const MelFilterbank fb(cfg.n_mel_filters, nfft, fs, cfg.fmin_hz, cfg.fmax_hz);
  const Matrix dct = dct2_matrix(first + n_coeffs, cfg.n_mel_filters).bottomRows(n_coeffs);

  FeatureMatrix out;
  out.frame_rate = 1000.0 / cfg.frame_ms;
  out.data.resize(static_cast<Eigen::Index>(slices.size()), n_coeffs);
  std::vector<double> x(win_len);
  for (std::size_t t = 0; t < slices.size(); ++t) {
    const auto w = gather_slice(signal, slices[t]);
    for (std::size_t i = 0; i < win_len; ++i) x[i] = w[i] * taper[i];
    const Vector loge = (fb.apply(power_spectrum(x, nfft)).array() + cfg.log_floor).log().matrix();
    out.data.row(static_cast<Eigen::Index>(t)) = (dct * loge).transpose();
  }
  return out;
}

// Regression deltas with edge-frame replication:
//   d_t = sum_{k=1..span} k (x_{t+k} - x_{t-k}) / (2 sum_k k^2)
inline FeatureMatrix compute_deltas(const FeatureMatrix& feats, int span) {
  require(feats.frames() >= 1, "shape", "deltas need at least one frame");
  require(span >= 1, "value", "delta span must be >= 1");
  const Eigen::Index n = feats.frames();
  double denom = 0.0;
  for (int k = 1; k <= span; ++k) denom += double(k) * k;
  denom *= 2.0;
  FeatureMatrix out;
  out.frame_rate = feats.frame_rate;
  out.data = Matrix::Zero(n, feats.dims());
  for (Eigen::Index t = 0; t < n; ++t) {
    for (int k = 1; k <= span; ++k) {
      const Eigen::Index fwd = std::min<Eigen::Index>(t + k, n - 1);
      const Eigen::Index back = std::max<Eigen::Index>(t - k, 0);
      out.data.row(t) += double(k) * (feats.data.row(fwd) - feats.data.row(back));
    }
    out.data.row(t) /= denom;
  }
  return out;
}

// Static MFCCs from short windows stacked with deltas and double deltas of
// MFCCs computed on longer windows. All streams share the base frame grid.
inline FeatureMatrix extract_boosted_features(const std::vector<double>& signal, double fs,
                                              const MfccConfig& cfg) {
  cfg.validate();
  const FeatureMatrix statics =
      extract_mfcc(signal, fs, cfg.static_window_ms, cfg.n_static, cfg.include_c0_static, cfg);
  const int n_dyn = std::max(cfg.n_delta, cfg.n_double_delta);
  const FeatureMatrix dyn_base =
      extract_mfcc(signal, fs, cfg.delta_window_ms, n_dyn, cfg.include_c0_dynamic, cfg);
  const FeatureMatrix d1 = compute_deltas(dyn_base, cfg.delta_span);
  const FeatureMatrix d2 = compute_deltas(d1, cfg.delta_span);
  require(statics.frames() == dyn_base.frames(), "shape", "feature streams disagree in length");

  FeatureMatrix out;
  out.frame_rate = statics.frame_rate;
  out.data.resize(statics.frames(), cfg.n_static + cfg.n_delta + cfg.n_double_delta);
  out.data.leftCols(cfg.n_static) = statics.data;
  out.data.middleCols(cfg.n_static, cfg.n_delta) = d1.data.leftCols(cfg.n_delta);
  out.data.rightCols(cfg.n_double_delta) = d2.data.leftCols(cfg.n_double_delta);
  return out;
}

// ---------------------------------------------------------------------------
// Log-filterbank spectrogram for the CNN branch
// ---------------------------------------------------------------------------

struct SpectrogramConfig {
  int sample_rate_hz = 22050;
  int fft_size = 2048;
  double frame_rate_fps = 31.25;
  int n_bands = 149;
  double fmin_hz = 20.0;
  double fmax_hz = 16000.0;
  double log_floor = 1e-10;

  double effective_fmax() const { return std::min(fmax_hz, sample_rate_hz / 2.0); }

  void validate() const {
    require(fft_size > 0 && (fft_size & (fft_size - 1)) == 0, "config",
            "spectrogram.fft_size must be a power of two");
    require(frame_rate_fps > 0, "config", "spectrogram.frame_rate_fps must be positive");
    require(n_bands >= 1, "config", "spectrogram.n_bands must be >= 1");
    require(sample_rate_hz > 0, "config", "spectrogram.sample_rate_hz must be positive");
    require(fmin_hz > 0 && fmin_hz < effective_fmax(), "config",
            "spectrogram passband is empty after Nyquist clamp");
    require(log_floor > 0, "config", "spectrogram.log_floor must be positive");
  }
};

// Triangular filters on logarithmically spaced edges (n_bands + 2 points from
// fmin to the clamped fmax). A filter narrower than one FFT bin collapses onto
// the bin nearest its centre so that no band is empty.
inline Matrix log_filterbank(const SpectrogramConfig& cfg) {
  cfg.validate();
  const double fmax = cfg.effective_fmax();
  const int nb = cfg.n_bands;
  const std::size_t n_bins = static_cast<std::size_t>(cfg.fft_size) / 2 + 1;
  const double bin_hz = double(cfg.sample_rate_hz) / cfg.fft_size;
  std::vector<double> edges(nb + 2);
  for (int i = 0; i < nb + 2; ++i)
    edges[i] = cfg.fmin_hz * std::pow(fmax / cfg.fmin_hz, double(i) / (nb + 1));
  Matrix w = Matrix::Zero(nb, static_cast<Eigen::Index>(n_bins));
  for (int b = 0; b < nb; ++b) {
    const double lo = edges[b], c = edges[b + 1], hi = edges[b + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = double(k) * bin_hz;
      double v = 0.0;
      if (f > lo && f <= c)
        v = (f - lo) / (c - lo);
      else if (f > c && f < hi)
        v = (hi - f) / (hi - c);
      w(b, static_cast<Eigen::Index>(k)) = v;
    }
    if (w.row(b).sum() <= 0.0) {
      const auto k = std::min<std::size_t>(static_cast<std::size_t>(std::llround(c / bin_hz)),
                                           n_bins - 1);
      w(b, static_cast<Eigen::Index>(k)) = 1.0;
    }
  }
  return w;
}

inline std::size_t spectrogram_frames(std::size_t n_samples, const SpectrogramConfig& cfg) {
  return static_cast<std::size_t>(
      std::floor(double(n_samples) * cfg.frame_rate_fps / cfg.sample_rate_hz + 1e-9));
}

// Frame i starts at round(i * fs / fps); the tail of the last frames is
// zero-padded. Output is frames x n_bands of log(magnitude + floor).
inline FeatureMatrix log_mel_spectrogram(const std::vector<double>& signal, int fs,
                                         const SpectrogramConfig& cfg) {
  cfg.validate();
  if (fs != cfg.sample_rate_hz)
    fail("value", "spectrogram expects " + std::to_string(cfg.sample_rate_hz) + " Hz input, got " +
                      std::to_string(fs));
  const std::size_t nfft = static_cast<std::size_t>(cfg.fft_size);
  if (signal.size() < nfft) fail("shape", "signal shorter than one FFT window");
  const std::size_t n_frames = spectrogram_frames(signal.size(), cfg);
  const Matrix fb = log_filterbank(cfg);
  const auto taper = hann_window(nfft);
  const double hop = double(cfg.sample_rate_hz) / cfg.frame_rate_fps;

  Eigen::FFT<double> fft;
  std::vector<double> x(nfft);
  std::vector<std::complex<double>> spec;
  Vector mag(static_cast<Eigen::Index>(nfft / 2 + 1));
  FeatureMatrix out;
  out.frame_rate = cfg.frame_rate_fps;
  out.data.resize(static_cast<Eigen::Index>(n_frames), cfg.n_bands);
  for (std::size_t t = 0; t < n_frames; ++t) {
    const std::size_t start = static_cast<std::size_t>(std::llround(double(t) * hop));
    for (std::size_t i = 0; i < nfft; ++i) {
      const std::size_t j = start + i;
      x[i] = j < signal.size() ? signal[j] * taper[i] : 0.0;
    }
    fft.fwd(spec, x);
    for (Eigen::Index k = 0; k < mag.size(); ++k) mag[k] = std::abs(spec[static_cast<std::size_t>(k)]);
    out.data.row(static_cast<Eigen::Index>(t)) =
        ((fb * mag).array() + cfg.log_floor).log().matrix().transpose();
  }
  return out;
}

// A bands x width patch cut from a spectrogram.
struct Excerpt {
  Matrix patch;
  std::string clip_id;
  std::size_t start = 0;
};

inline std::vector<std::size_t> excerpt_offsets(std::size_t frames, std::size_t width,
                                                std::size_t stride) {
  require(width >= 1 && stride >= 1, "value", "excerpt width and stride must be >= 1");
  if (frames < width)
    fail("shape", "clip has " + std::to_string(frames) + " frames, excerpt needs " +
                      std::to_string(width));
  std::vector<std::size_t> offs;
  for (std::size_t o = 0; o + width <= frames; o += stride) offs.push_back(o);
  if (offs.back() != frames - width) offs.push_back(frames - width);
  return offs;
}

inline std::vector<Excerpt> excerpt_windows(const FeatureMatrix& spec, std::size_t width,
                                            std::size_t stride, const std::string& clip_id = {}) {
  const auto offs = excerpt_offsets(static_cast<std::size_t>(spec.frames()), width, stride);
  std::vector<Excerpt> out;
  out.reserve(offs.size());
  for (auto o : offs)
    out.push_back({spec.data.middleRows(static_cast<Eigen::Index>(o),
                                        static_cast<Eigen::Index>(width))
                       .transpose(),
                   clip_id, o});
  return out;
}

}  // namespace ascm
