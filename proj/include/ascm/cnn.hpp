// ascm/cnn.hpp

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

// A small convolutional network library (conv, batch norm, ReLU, max pool,
// dropout, global average pooling, softmax) with hand-written backward passes,
// templated on the scalar type so gradient checks can run in double while
// training runs in float.

#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ascm/common.hpp"
#include "ascm/features.hpp"
#include "ascm/io.hpp"

namespace ascm::cnn {

enum class LayerKind { kConv, kBatchNorm, kRelu, kMaxPool, kDropout, kGlobalAvgPool, kSoftmax };

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  int kernel_h = 0, kernel_w = 0, pad = 0, stride = 1, out_channels = 0;  // conv
  int pool = 0;                                                            // maxpool
  double rate = 0.0;                                                       // dropout

  static LayerSpec conv(int k, int pad, int stride, int out) {
    LayerSpec s;
    s.kind = LayerKind::kConv;
    s.kernel_h = s.kernel_w = k;
    s.pad = pad;
    s.stride = stride;
    s.out_channels = out;
    return s;
  }
  static LayerSpec batchnorm() { return {LayerKind::kBatchNorm}; }
  static LayerSpec relu() { return {LayerKind::kRelu}; }
  static LayerSpec maxpool(int size) {
    LayerSpec s{LayerKind::kMaxPool};
    s.pool = size;
    return s;
  }
  static LayerSpec dropout(double rate) {
    LayerSpec s{LayerKind::kDropout};
    s.rate = rate;
    return s;
  }
  static LayerSpec global_average_pool() { return {LayerKind::kGlobalAvgPool}; }
  static LayerSpec softmax() { return {LayerKind::kSoftmax}; }

  void validate() const {
    if (kind == LayerKind::kConv)
      require(kernel_h >= 1 && kernel_w >= 1 && pad >= 0 && stride >= 1 && out_channels >= 1, "config",
              "invalid convolution parameters");
    if (kind == LayerKind::kMaxPool) require(pool >= 1, "config", "invalid pool size");
    if (kind == LayerKind::kDropout)
      require(rate >= 0.0 && rate < 1.0, "config", "dropout rate must be in [0, 1)");
  }

  std::string to_string() const {
    std::ostringstream o;
    switch (kind) {
      case LayerKind::kConv:
        o << "conv " << kernel_h << ' ' << kernel_w << ' ' << pad << ' ' << stride << ' ' << out_channels;
        break;
      case LayerKind::kBatchNorm: o << "batchnorm"; break;
      case LayerKind::kRelu: o << "relu"; break;
      case LayerKind::kMaxPool: o << "maxpool " << pool; break;
      case LayerKind::kDropout: o << "dropout " << format_double(rate); break;
      case LayerKind::kGlobalAvgPool: o << "gap"; break;
      case LayerKind::kSoftmax: o << "softmax"; break;
    }
    return o.str();
  }

  static LayerSpec parse(const std::string& line) {
    std::istringstream in(line);
    std::string kind;
    in >> kind;
    LayerSpec s;
    if (kind == "conv") {
      s.kind = LayerKind::kConv;
      in >> s.kernel_h >> s.kernel_w >> s.pad >> s.stride >> s.out_channels;
    } else if (kind == "batchnorm") {
      s.kind = LayerKind::kBatchNorm;
    } else if (kind == "relu") {
      s.kind = LayerKind::kRelu;
    } else if (kind == "maxpool") {
      s.kind = LayerKind::kMaxPool;
      in >> s.pool;
    } else if (kind == "dropout") {
      s.kind = LayerKind::kDropout;
      in >> s.rate;
    } else if (kind == "gap") {
      s.kind = LayerKind::kGlobalAvgPool;
    } else if (kind == "softmax") {
      s.kind = LayerKind::kSoftmax;
    } else {
      fail("format", "unknown layer '" + line + "'");
    }
    if (!in && kind != "batchnorm" && kind != "relu" && kind != "gap" && kind != "softmax")
      fail("format", "bad layer line '" + line + "'");
    s.validate();
    return s;
  }
};

// Full-size network: VGG-style feature stages, 1x1 classifier conv and
// global average pooling. `width` scales every hidden channel count.
inline std::vector<LayerSpec> vgg_architecture(int n_classes, double width = 1.0) {
  auto ch = [&](int c) { return std::max(1, static_cast<int>(std::lround(c * width))); };
  using L = LayerSpec;
  std::vector<L> a;
  auto cbr = [&](int k, int pad, int stride, int out) {
    a.push_back(L::conv(k, pad, stride, out));
    a.push_back(L::batchnorm());
    a.push_back(L::relu());
  };
  cbr(5, 2, 2, ch(32));
  cbr(3, 1, 1, ch(32));
  a.push_back(L::maxpool(2));
  a.push_back(L::dropout(0.3));
  cbr(3, 1, 1, ch(64));
  cbr(3, 1, 1, ch(64));
  a.push_back(L::maxpool(2));
  a.push_back(L::dropout(0.3));
  for (int i = 0; i < 4; ++i) cbr(3, 1, 1, ch(128));
  a.push_back(L::maxpool(2));
  a.push_back(L::dropout(0.3));
  cbr(3, 0, 1, ch(512));
  a.push_back(L::dropout(0.5));
  cbr(1, 0, 1, ch(512));
  a.push_back(L::dropout(0.5));
  cbr(1, 0, 1, n_classes);
  a.push_back(L::global_average_pool());
  a.push_back(L::softmax());
  return a;
}

// Two VGG stages and the same classifier head, for small inputs such as
// 24-band x 48-frame excerpts.
inline std::vector<LayerSpec> compact_architecture(int n_classes, int base_channels = 8) {
  using L = LayerSpec;
  std::vector<L> a;
  auto cbr = [&](int k, int pad, int stride, int out) {
    a.push_back(L::conv(k, pad, stride, out));
    a.push_back(L::batchnorm());
    a.push_back(L::relu());
  };
  cbr(5, 2, 2, base_channels);
  cbr(3, 1, 1, base_channels);
  a.push_back(L::maxpool(2));
  a.push_back(L::dropout(0.3));
  cbr(3, 1, 1, 2 * base_channels);
  cbr(3, 1, 1, 2 * base_channels);
  a.push_back(L::maxpool(2));
  a.push_back(L::dropout(0.3));
  cbr(1, 0, 1, n_classes);
  a.push_back(L::global_average_pool());
  a.push_back(L::softmax());
  return a;
}

struct Shape {
  int c = 0, h = 0, w = 0;
  int size() const { return c * h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline int conv_out(int n, int k, int pad, int stride) { return (n + 2 * pad - k) / stride + 1; }

inline Shape output_shape(const LayerSpec& s, const Shape& in) {
  switch (s.kind) {
    case LayerKind::kConv: {
      const int h = in.h + 2 * s.pad - s.kernel_h;
      const int w = in.w + 2 * s.pad - s.kernel_w;
      if (h < 0 || w < 0) fail("shape", "input too small for " + s.to_string());
      return {s.out_channels, h / s.stride + 1, w / s.stride + 1};
    }
    case LayerKind::kMaxPool:
      if (in.h < s.pool || in.w < s.pool) fail("shape", "input too small for " + s.to_string());
      return {in.c, in.h / s.pool, in.w / s.pool};
    case LayerKind::kGlobalAvgPool: return {in.c, 1, 1};
    default: return in;
  }
}

// Shapes after every layer, starting with the input.
inline std::vector<Shape> shape_trace(const std::vector<LayerSpec>& arch, Shape in) {
  std::vector<Shape> out{in};
  for (const auto& s : arch) out.push_back(output_shape(s, out.back()));
  return out;
}

// Dense batch of feature maps, NCHW.
template <typename T>
struct Tensor {
  int n = 0;
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, Shape s, T fill = T(0))
      : n(n_), shape(s), data(static_cast<std::size_t>(n_) * s.size(), fill) {}
  T* sample(int i) { return data.data() + static_cast<std::size_t>(i) * shape.size(); }
  const T* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * shape.size(); }
};

enum class Mode { kTrain, kEval };

template <typename T>
struct Param {
  std::string name;
  std::vector<T> value, grad, velocity;

  explicit Param(std::string n = {}, std::size_t size = 0)
      : name(std::move(n)), value(size, T(0)), grad(size, T(0)), velocity(size, T(0)) {}
};

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const Mat<T>>;

template <typename T>
class Layer {
 public:
  explicit Layer(LayerSpec spec, Shape in) : spec_(spec), in_(in), out_(output_shape(spec, in)) {}
  virtual ~Layer() = default;
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64& rng) = 0;
  // Consumes dL/d(output), accumulates parameter gradients, returns dL/d(input).
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
  // Non-trainable state (batch-norm running statistics).
  virtual std::vector<std::pair<std::string, std::vector<T>*>> buffers() { return {}; }

  const LayerSpec& spec() const { return spec_; }
  Shape in_shape() const { return in_; }
  Shape out_shape() const { return out_; }

 protected:
  LayerSpec spec_;
  Shape in_, out_;
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(LayerSpec s, Shape in)
      : Layer<T>(s, in),
        weight_("weight", static_cast<std::size_t>(s.out_channels) * in.c * s.kernel_h * s.kernel_w),
        bias_("bias", static_cast<std::size_t>(s.out_channels)) {}
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

  int fan_in() const { return this->in_.c * this->spec_.kernel_h * this->spec_.kernel_w; }

  Tensor<T> forward(const Tensor<T>& x, Mode, std::mt19937_64&) override {
    input_ = x;
    const Shape o = this->out_;
    Tensor<T> y(x.n, o);
    const int k = fan_in(), hw = o.h * o.w;
    CMapMat<T> w(weight_.value.data(), o.c, k);
    Mat<T> col(k, hw);
    for (int i = 0; i < x.n; ++i) {
      im2col(x.sample(i), col);
      MapMat<T> out(y.sample(i), o.c, hw);
      out.noalias() = w * col;
      for (int c = 0; c < o.c; ++c) out.row(c).array() += bias_.value[static_cast<std::size_t>(c)];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) override {
    const Shape o = this->out_;
    const int k = fan_in(), hw = o.h * o.w;
    Tensor<T> gx(gy.n, this->in_);
    CMapMat<T> w(weight_.value.data(), o.c, k);
    MapMat<T> gw(weight_.grad.data(), o.c, k);
    Mat<T> col(k, hw), gcol(k, hw);
    for (int i = 0; i < gy.n; ++i) {
      CMapMat<T> g(gy.sample(i), o.c, hw);
      im2col(input_.sample(i), col);
      gw.noalias() += g * col.transpose();
      for (int c = 0; c < o.c; ++c) bias_.grad[static_cast<std::size_t>(c)] += g.row(c).sum();
      gcol.noalias() = w.transpose() * g;
      col2im(gcol, gx.sample(i));
    }
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

 private:
  void im2col(const T* x, Mat<T>& col) const {
    const auto& s = this->spec_;
    const Shape in = this->in_, o = this->out_;
    for (int ci = 0; ci < in.c; ++ci)
      for (int ki = 0; ki < s.kernel_h; ++ki)
        for (int kj = 0; kj < s.kernel_w; ++kj) {
          const int row = (ci * s.kernel_h + ki) * s.kernel_w + kj;
          T* dst = col.data() + static_cast<std::size_t>(row) * o.h * o.w;
          for (int oh = 0; oh < o.h; ++oh) {
            const int ih = oh * s.stride - s.pad + ki;
            for (int ow = 0; ow < o.w; ++ow) {
              const int iw = ow * s.stride - s.pad + kj;
              *dst++ = (ih >= 0 && ih < in.h && iw >= 0 && iw < in.w)
                           ? x[(static_cast<std::size_t>(ci) * in.h + ih) * in.w + iw]
                           : T(0);
            }
          }
        }
  }

  void col2im(const Mat<T>& col, T* x) const {
    const auto& s = this->spec_;
    const Shape in = this->in_, o = this->out_;
    for (int ci = 0; ci < in.c; ++ci)
      for (int ki = 0; ki < s.kernel_h; ++ki)
        for (int kj = 0; kj < s.kernel_w; ++kj) {
          const int row = (ci * s.kernel_h + ki) * s.kernel_w + kj;
          const T* src = col.data() + static_cast<std::size_t>(row) * o.h * o.w;
          for (int oh = 0; oh < o.h; ++oh) {
            const int ih = oh * s.stride - s.pad + ki;
            for (int ow = 0; ow < o.w; ++ow, ++src) {
              const int iw = ow * s.stride - s.pad + kj;
              if (ih >= 0 && ih < in.h && iw >= 0 && iw < in.w)
                x[(static_cast<std::size_t>(ci) * in.h + ih) * in.w + iw] += *src;
            }
          }
        }
  }

 public:
  Param<T> weight_, bias_;

 private:
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEpsilon = 1e-5;

  BatchNorm2d(LayerSpec s, Shape in)
      : Layer<T>(s, in),
        gamma_("gamma", static_cast<std::size_t>(in.c)),
        beta_("beta", static_cast<std::size_t>(in.c)),
        running_mean_(static_cast<std::size_t>(in.c), T(0)),
        running_var_(static_cast<std::size_t>(in.c), T(1)) {
    std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm2d>(*this); }

  // When set, train-mode forward keeps the running statistics unchanged.
  bool freeze_running_stats = false;

  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64&) override {
    const Shape sh = this->in_;
    const int hw = sh.h * sh.w;
    const double m = double(x.n) * hw;
    Tensor<T> y(x.n, sh);
    xhat_ = Tensor<T>(x.n, sh);
    inv_std_.assign(static_cast<std::size_t>(sh.c), T(0));
    for (int c = 0; c < sh.c; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      double mean, var;
      if (mode == Mode::kTrain) {
        double s = 0.0;
        for (int i = 0; i < x.n; ++i) {
          const T* p = x.sample(i) + static_cast<std::size_t>(c) * hw;
          for (int j = 0; j < hw; ++j) s += p[j];
        }
        mean = s / m;
        double v = 0.0;
        for (int i = 0; i < x.n; ++i) {
          const T* p = x.sample(i) + static_cast<std::size_t>(c) * hw;
          for (int j = 0; j < hw; ++j) v += (p[j] - mean) * (p[j] - mean);
        }
        var = v / m;
        if (!freeze_running_stats) {
          running_mean_[cu] = T((1 - kMomentum) * running_mean_[cu] + kMomentum * mean);
          running_var_[cu] = T((1 - kMomentum) * running_var_[cu] + kMomentum * var);
        }
      } else {
        mean = running_mean_[cu];
        var = running_var_[cu];
      }
      const T inv = T(1.0 / std::sqrt(var + kEpsilon));
      inv_std_[cu] = inv;
      const T g = gamma_.value[cu], b = beta_.value[cu], mu = T(mean);
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.sample(i) + static_cast<std::size_t>(c) * hw;
        T* xh = xhat_.sample(i) + static_cast<std::size_t>(c) * hw;
        T* q = y.sample(i) + static_cast<std::size_t>(c) * hw;
        for (int j = 0; j < hw; ++j) {
          xh[j] = (p[j] - mu) * inv;
          q[j] = g * xh[j] + b;
        }
      }
    }
    return y;
  }

  // Train-mode backward (batch statistics).
  Tensor<T> backward(const Tensor<T>& gy) override {
    const Shape sh = this->in_;
    const int hw = sh.h * sh.w;
    const T m = T(double(gy.n) * hw);
    Tensor<T> gx(gy.n, sh);
    for (int c = 0; c < sh.c; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      T sum_g = 0, sum_gx = 0;
      for (int i = 0; i < gy.n; ++i) {
        const T* g = gy.sample(i) + static_cast<std::size_t>(c) * hw;
        const T* xh = xhat_.sample(i) + static_cast<std::size_t>(c) * hw;
        for (int j = 0; j < hw; ++j) {
          sum_g += g[j];
          sum_gx += g[j] * xh[j];
        }
      }
      gamma_.grad[cu] += sum_gx;
      beta_.grad[cu] += sum_g;
      const T k = gamma_.value[cu] * inv_std_[cu] / m;
      for (int i = 0; i < gy.n; ++i) {
        const T* g = gy.sample(i) + static_cast<std::size_t>(c) * hw;
        const T* xh = xhat_.sample(i) + static_cast<std::size_t>(c) * hw;
        T* d = gx.sample(i) + static_cast<std::size_t>(c) * hw;
        for (int j = 0; j < hw; ++j) d[j] = k * (m * g[j] - sum_g - xh[j] * sum_gx);
      }
    }
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<std::pair<std::string, std::vector<T>*>> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }

  Param<T> gamma_, beta_;
  std::vector<T> running_mean_, running_var_;

 private:
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

template <typename T>
class Relu final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Relu>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Mode, std::mt19937_64&) override {
    Tensor<T> y = x;
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    output_ = y;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.data.size(); ++i)
      if (!(output_.data[i] > T(0))) gx.data[i] = T(0);
    return gx;
  }

 private:
  Tensor<T> output_;
};

// Non-overlapping max pooling with floor semantics; gradient flows only to the
// first maximal element of each window.
template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2d>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Mode, std::mt19937_64&) override {
    const Shape in = this->in_, o = this->out_;
    const int p = this->spec_.pool;
    Tensor<T> y(x.n, o);
    argmax_.assign(y.data.size(), 0);
    for (int i = 0; i < x.n; ++i)
      for (int c = 0; c < o.c; ++c)
        for (int oh = 0; oh < o.h; ++oh)
          for (int ow = 0; ow < o.w; ++ow) {
            std::size_t best = 0;
            T bv = T(0);
            bool first = true;
            for (int a = 0; a < p; ++a)
              for (int b = 0; b < p; ++b) {
                const std::size_t idx = ((static_cast<std::size_t>(c) * in.h) + oh * p + a) * in.w + ow * p + b;
                const T v = x.sample(i)[idx];
                if (first || v > bv) {
                  bv = v;
                  best = idx;
                  first = false;
                }
              }
            const std::size_t oidx = (static_cast<std::size_t>(c) * o.h + oh) * o.w + ow;
            y.sample(i)[oidx] = bv;
            argmax_[static_cast<std::size_t>(i) * o.size() + oidx] = best;
          }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    const Shape o = this->out_;
    Tensor<T> gx(gy.n, this->in_);
    for (int i = 0; i < gy.n; ++i)
      for (int j = 0; j < o.size(); ++j)
        gx.sample(i)[argmax_[static_cast<std::size_t>(i) * o.size() + j]] += gy.sample(i)[j];
    return gx;
  }

 private:
  std::vector<std::size_t> argmax_;
};

// Inverted dropout: surviving activations are scaled by 1/(1-rate) in training.
template <typename T>
class Dropout final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dropout>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64& rng) override {
    const double rate = this->spec_.rate;
    mask_.assign(x.data.size(), T(1));
    if (mode == Mode::kEval || rate == 0.0) return x;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const T scale = T(1.0 / (1.0 - rate));
    Tensor<T> y = x;
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      mask_[i] = u(rng) < rate ? T(0) : scale;
      y.data[i] *= mask_[i];
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] *= mask_[i];
    return gx;
  }

 private:
  std::vector<T> mask_;
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Mode, std::mt19937_64&) override {
    const Shape in = this->in_;
    const int hw = in.h * in.w;
    Tensor<T> y(x.n, this->out_);
    for (int i = 0; i < x.n; ++i)
      for (int c = 0; c < in.c; ++c) {
        T s = 0;
        const T* p = x.sample(i) + static_cast<std::size_t>(c) * hw;
        for (int j = 0; j < hw; ++j) s += p[j];
        y.sample(i)[c] = s / T(hw);
      }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    const Shape in = this->in_;
    const int hw = in.h * in.w;
    Tensor<T> gx(gy.n, in);
    for (int i = 0; i < gy.n; ++i)
      for (int c = 0; c < in.c; ++c) {
        const T g = gy.sample(i)[c] / T(hw);
        T* d = gx.sample(i) + static_cast<std::size_t>(c) * hw;
        for (int j = 0; j < hw; ++j) d[j] = g;
      }
    return gx;
  }
};

// Softmax over all features of a sample.
template <typename T>
class Softmax final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Softmax>(*this); }
  Tensor<T> forward(const Tensor<T>& x, Mode, std::mt19937_64&) override {
    Tensor<T> y(x.n, this->out_);
    const int d = x.shape.size();
    for (int i = 0; i < x.n; ++i) {
      const T* p = x.sample(i);
      T* q = y.sample(i);
      const T m = *std::max_element(p, p + d);
      T s = 0;
      for (int j = 0; j < d; ++j) s += (q[j] = std::exp(p[j] - m));
      for (int j = 0; j < d; ++j) q[j] /= s;
    }
    output_ = y;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx(gy.n, this->in_);
    const int d = gy.shape.size();
    for (int i = 0; i < gy.n; ++i) {
      const T* p = output_.sample(i);
      const T* g = gy.sample(i);
      T dot = 0;
      for (int j = 0; j < d; ++j) dot += g[j] * p[j];
      for (int j = 0; j < d; ++j) gx.sample(i)[j] = p[j] * (g[j] - dot);
    }
    return gx;
  }
  const Tensor<T>& output() const { return output_; }

 private:
  Tensor<T> output_;
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& s, Shape in) {
  s.validate();
  switch (s.kind) {
    case LayerKind::kConv: return std::make_unique<Conv2d<T>>(s, in);
    case LayerKind::kBatchNorm: return std::make_unique<BatchNorm2d<T>>(s, in);
    case LayerKind::kRelu: return std::make_unique<Relu<T>>(s, in);
    case LayerKind::kMaxPool: return std::make_unique<MaxPool2d<T>>(s, in);
    case LayerKind::kDropout: return std::make_unique<Dropout<T>>(s, in);
    case LayerKind::kGlobalAvgPool: return std::make_unique<GlobalAvgPool<T>>(s, in);
    case LayerKind::kSoftmax: return std::make_unique<Softmax<T>>(s, in);
  }
  fail("config", "unknown layer kind");
}

template <typename T>
class Network {
 public:
  Network() = default;
  Network(const Network& o) : input_(o.input_), weight_decay_(o.weight_decay_) {
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Network& operator=(Network o) {
    std::swap(layers_, o.layers_);
    input_ = o.input_;
    weight_decay_ = o.weight_decay_;
    return *this;
  }
  Network(Network&&) noexcept = default;

  // Builds the layer stack and initialises conv weights from N(0, 2/fan_in).
  static Network build(const std::vector<LayerSpec>& arch, Shape input, std::uint64_t seed) {
    require(input.c >= 1 && input.h >= 1 && input.w >= 1, "shape", "network input must be non-empty");
    Network net;
    net.input_ = input;
    Shape cur = input;
    for (const auto& s : arch) {
      net.layers_.push_back(make_layer<T>(s, cur));
      cur = net.layers_.back()->out_shape();
      if (cur.h < 1 || cur.w < 1) fail("shape", "layer " + s.to_string() + " yields an empty map");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& l : net.layers_) {
      if (auto* conv = dynamic_cast<Conv2d<T>*>(l.get())) {
        const double sd = std::sqrt(2.0 / conv->fan_in());
        for (auto& w : conv->weight_.value) w = T(sd * normal(rng));
      }
    }
    return net;
  }

  Shape input_shape() const { return input_; }
  Shape output_shape() const { return layers_.empty() ? input_ : layers_.back()->out_shape(); }
  int n_classes() const { return output_shape().size(); }
  std::vector<LayerSpec> architecture() const {
    std::vector<LayerSpec> a;
    for (const auto& l : layers_) a.push_back(l->spec());
    return a;
  }
  std::vector<std::unique_ptr<Layer<T>>>& layers() { return layers_; }

  // L2 coefficient lambda; the penalty is 0.5 * lambda * ||w||^2 over all
  // trainable tensors, so its gradient is lambda * w.
  double weight_decay() const { return weight_decay_; }
  void set_weight_decay(double v) { weight_decay_ = v; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::uint64_t seed = 0) {
    require(x.shape == input_, "shape", "batch shape does not match network input");
    for (const auto& v : x.data)
      if (!std::isfinite(double(v))) fail("value", "non-finite network input");
    std::mt19937_64 rng(seed);
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h, mode, rng);
    return h;
  }

  // Mean categorical cross-entropy of `probs` plus the L2 penalty.
  double loss(const Tensor<T>& probs, const std::vector<int>& targets) const {
    require(static_cast<int>(targets.size()) == probs.n, "shape", "target count mismatch");
    double ce = 0.0;
    const int C = probs.shape.size();
    for (int i = 0; i < probs.n; ++i) {
      const int y = targets[static_cast<std::size_t>(i)];
      require(y >= 0 && y < C, "value", "target out of range");
      ce -= std::log(std::max(double(probs.sample(i)[y]), 1e-300));
    }
    return ce / probs.n + l2_penalty();
  }

  double l2_penalty() const {
    double s = 0.0;
    for (auto* p : const_cast<Network*>(this)->params())
      for (const auto& v : p->value) s += double(v) * double(v);
    return 0.5 * weight_decay_ * s;
  }

  // Gradients of loss() after a forward pass. The softmax/cross-entropy pair
  // is differentiated jointly: dL/dlogits = (p - onehot) / B.
  void backward(const Tensor<T>& probs, const std::vector<int>& targets) {
    require(static_cast<int>(targets.size()) == probs.n, "shape", "target count mismatch");
    for (auto* p : params()) std::fill(p->grad.begin(), p->grad.end(), T(0));
    Tensor<T> g = probs;
    const T inv_b = T(1.0 / probs.n);
    for (int i = 0; i < probs.n; ++i) {
      g.sample(i)[targets[static_cast<std::size_t>(i)]] -= T(1);
      for (int j = 0; j < probs.shape.size(); ++j) g.sample(i)[j] *= inv_b;
    }
    std::size_t last = layers_.size();
    if (last > 0 && layers_.back()->spec().kind == LayerKind::kSoftmax) --last;
    for (std::size_t i = last; i-- > 0;) g = layers_[i]->backward(g);
    for (auto* p : params())
      for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += T(weight_decay_) * p->value[i];
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }

  Container to_container() {
    Container c;
    std::string arch;
    for (const auto& l : layers_) arch += l->spec().to_string() + '\n';
    c.set_text("architecture", arch);
    c.set_text("input", std::to_string(input_.c) + ' ' + std::to_string(input_.h) + ' ' +
                            std::to_string(input_.w));
    c.set_scalar("weight_decay", weight_decay_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string pre = "layer" + std::to_string(i) + '.';
      for (auto* p : layers_[i]->params()) c.set(pre + p->name, to_row(p->value));
      for (auto& [name, buf] : layers_[i]->buffers()) c.set(pre + name, to_row(*buf));
    }
    return c;
  }

  static Network from_container(const Container& c) {
    std::istringstream in(c.text("input"));
    Shape s;
    in >> s.c >> s.h >> s.w;
    std::vector<LayerSpec> arch;
    std::istringstream a(c.text("architecture"));
    std::string line;
    while (std::getline(a, line))
      if (!line.empty()) arch.push_back(LayerSpec::parse(line));
    Network net = build(arch, s, 0);
    net.weight_decay_ = c.scalar("weight_decay");
    for (std::size_t i = 0; i < net.layers_.size(); ++i) {
      const std::string pre = "layer" + std::to_string(i) + '.';
      for (auto* p : net.layers_[i]->params()) from_row(c.matrix(pre + p->name), p->value);
      for (auto& [name, buf] : net.layers_[i]->buffers()) from_row(c.matrix(pre + name), *buf);
    }
    return net;
  }

 private:
  static Matrix to_row(const std::vector<T>& v) {
    Matrix m(1, static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = double(v[i]);
    return m;
  }
  static void from_row(const Matrix& m, std::vector<T>& v) {
    require(static_cast<std::size_t>(m.size()) == v.size(), "format", "checkpoint tensor size mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(m.data()[i]);
  }

  std::vector<std::unique_ptr<Layer<T>>> layers_;
  Shape input_;
  double weight_decay_ = 0.0;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int batch_size = 100;
  double initial_lr = 0.02;
  int lr_halving_period = 5;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 30;
  std::uint64_t seed = 0;

  void validate() const {
    require(batch_size >= 1, "config", "cnn.batch_size must be >= 1");
    require(initial_lr > 0, "config", "cnn.initial_lr must be positive");
    require(lr_halving_period >= 1, "config", "cnn.lr_halving_period must be >= 1");
    require(epochs >= 0, "config", "cnn.epochs must be >= 0");
  }
};

// initial_lr * 0.5^floor((epoch - 1) / period), epochs counted from 1.
inline double learning_rate(int epoch, const TrainConfig& cfg = {}) {
  require(epoch >= 1, "value", "epochs are counted from 1");
  return cfg.initial_lr * std::pow(0.5, (epoch - 1) / cfg.lr_halving_period);
}

// v <- momentum * v - lr * g ; w <- w + v
template <typename T>
void sgd_step(Network<T>& net, double lr, double momentum) {
  for (auto* p : net.params())
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->velocity[i] = T(momentum) * p->velocity[i] - T(lr) * p->grad[i];
      p->value[i] += p->velocity[i];
    }
}

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;  // training-batch accuracy, train mode
};

template <typename T>
Tensor<T> make_batch(const std::vector<Matrix>& patches, const std::vector<std::size_t>& idx,
                     std::size_t begin, std::size_t end, Shape shape) {
  Tensor<T> b(static_cast<int>(end - begin), shape);
  for (std::size_t i = begin; i < end; ++i) {
    const Matrix& p = patches[idx[i]];
    require(p.rows() == shape.h && p.cols() == shape.w, "shape", "excerpt does not match network input");
    T* dst = b.sample(static_cast<int>(i - begin));
    for (Eigen::Index r = 0; r < p.rows(); ++r)
      for (Eigen::Index c = 0; c < p.cols(); ++c) *dst++ = T(p(r, c));
  }
  return b;
}

// Mini-batch SGD with momentum; batches are reshuffled every epoch from the seed.
template <typename T>
TrainReport train(Network<T>& net, const std::vector<Matrix>& patches, const std::vector<int>& labels,
                  const TrainConfig& cfg) {
  cfg.validate();
  require(!patches.empty() && patches.size() == labels.size(), "data",
          "training needs at least one labelled excerpt");
  net.set_weight_decay(cfg.weight_decay);
  const Shape in = net.input_shape();
  TrainReport rep;
  std::vector<std::size_t> order(patches.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = learning_rate(epoch, cfg);
    double loss_sum = 0.0;
    std::size_t correct = 0, batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      const Tensor<T> x = make_batch<T>(patches, order, b0, b1, in);
      std::vector<int> y;
      for (std::size_t i = b0; i < b1; ++i) y.push_back(labels[order[i]]);
      const auto probs = net.forward(x, Mode::kTrain, derive_seed(cfg.seed, "dropout", epoch * 1000003ULL + batches));
      const double loss = net.loss(probs, y);
      if (!std::isfinite(loss))
        fail("numeric", "non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batches));
      for (int i = 0; i < probs.n; ++i) {
        const T* p = probs.sample(i);
        if (std::max_element(p, p + probs.shape.size()) - p == y[static_cast<std::size_t>(i)]) ++correct;
      }
      net.backward(probs, y);
      sgd_step(net, lr, cfg.momentum);
      loss_sum += loss;
      ++batches;
    }
    rep.epoch_loss.push_back(loss_sum / double(batches));
    rep.epoch_accuracy.push_back(100.0 * double(correct) / double(order.size()));
  }
  return rep;
}

// Class probabilities for each excerpt, in eval mode.
template <typename T>
Matrix predict_excerpts(Network<T>& net, const std::vector<Matrix>& patches, std::size_t batch = 64) {
  std::vector<std::size_t> idx(patches.size());
  std::iota(idx.begin(), idx.end(), 0);
  Matrix out(static_cast<Eigen::Index>(patches.size()), net.n_classes());
  for (std::size_t b0 = 0; b0 < patches.size(); b0 += batch) {
    const std::size_t b1 = std::min(patches.size(), b0 + batch);
    const auto probs = net.forward(make_batch<T>(patches, idx, b0, b1, net.input_shape()), Mode::kEval);
    for (int i = 0; i < probs.n; ++i)
      for (int c = 0; c < probs.shape.size(); ++c)
        out(static_cast<Eigen::Index>(b0) + i, c) = double(probs.sample(i)[c]);
  }
  return out;
}

struct ClipPrediction {
  Vector probs;
  std::string clip_id;
  int n_windows = 0;

  // Row for the score TSV: log of the averaged probabilities.
  Vector log_scores() const { return probs.array().max(1e-300).log().matrix(); }
};

inline ClipPrediction average_window_probs(const Matrix& window_probs, std::string clip_id = {}) {
  require(window_probs.rows() >= 1, "shape", "no windows to average");
  return {window_probs.colwise().mean().transpose(), std::move(clip_id),
          static_cast<int>(window_probs.rows())};
}

template <typename T>
ClipPrediction predict_clip(Network<T>& net, const FeatureMatrix& spec, std::size_t width,
                            std::size_t stride, const std::string& clip_id = {}) {
  const auto windows = excerpt_windows(spec, width, stride, clip_id);
  std::vector<Matrix> patches;
  patches.reserve(windows.size());
  for (const auto& w : windows) patches.push_back(w.patch);
  return average_window_probs(predict_excerpts(net, patches), clip_id);
}

}  // namespace ascm::cnn
