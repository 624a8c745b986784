#pragma once

#include "deepbv/conv.hpp"
#include "deepbv/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace deepbv {

// ---------------------------------------------------------------------------
// Free-function forms of the non-convolutional ops.
// ---------------------------------------------------------------------------

/// 2x2x2 max pooling. `argmax` (optional) receives, per output element, the
/// flat index of the winning input element; ties go to the first voxel in
/// x-fastest scan order.
template <typename Scalar>
Tensor<Scalar> maxpool3d(const Tensor<Scalar>& x, std::vector<std::uint32_t>* argmax = nullptr) {
  const Shape5& s = x.shape();
  if (s.d % 2 || s.h % 2 || s.w % 2) throw ShapeError("maxpool3d: odd spatial dims " + s.str());
  Tensor<Scalar> out({s.n, s.c, s.d / 2, s.h / 2, s.w / 2});
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int z = 0; z < s.d / 2; ++z)
        for (int y = 0; y < s.h / 2; ++y)
          for (int xx = 0; xx < s.w / 2; ++xx, ++o) {
            std::size_t best = x.index(n, c, 2 * z, 2 * y, 2 * xx);
            Scalar bv = x[best];
            for (int dz = 0; dz < 2; ++dz)
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                  const std::size_t i = x.index(n, c, 2 * z + dz, 2 * y + dy, 2 * xx + dx);
                  if (x[i] > bv) {
                    bv = x[i];
                    best = i;
                  }
                }
            out[o] = bv;
            if (argmax) (*argmax)[o] = std::uint32_t(best);
          }
  return out;
}

template <typename Scalar>
Tensor<Scalar> maxpool3d_backward(const Shape5& input_shape, const std::vector<std::uint32_t>& argmax,
                                  const Tensor<Scalar>& grad_out) {
  if (argmax.size() != grad_out.size()) throw ShapeError("maxpool3d_backward: argmax/grad size mismatch");
  Tensor<Scalar> gx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += grad_out[i];
  return gx;
}

/// Per-channel affine normalization state.
template <typename Scalar>
struct BatchNormState {
  Vector<Scalar> scale;
  Vector<Scalar> shift;
  Vector<Scalar> running_mean;
  Vector<Scalar> running_var;
  Scalar momentum = Scalar(0.1);
  Scalar eps = Scalar(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(int channels)
      : scale(Vector<Scalar>::Ones(channels)),
        shift(Vector<Scalar>::Zero(channels)),
        running_mean(Vector<Scalar>::Zero(channels)),
        running_var(Vector<Scalar>::Ones(channels)) {}

  int channels() const { return int(scale.size()); }
};

template <typename Scalar>
struct BatchNormCache {
  Tensor<Scalar> normalized;
  Vector<Scalar> inv_std;
  Mode mode = Mode::Eval;
};

/// Train mode normalizes each channel over (batch, spatial) and folds the
/// batch statistics into the running estimates; eval mode is the fixed affine
/// map built from the running estimates.
template <typename Scalar>
Tensor<Scalar> batchnorm(const Tensor<Scalar>& x, BatchNormState<Scalar>& st, Mode mode,
                         BatchNormCache<Scalar>* cache = nullptr) {
  const Shape5& s = x.shape();
  if (s.c != st.channels()) {
    throw ShapeError("batchnorm: input has " + std::to_string(s.c) + " channels, state has " +
                     std::to_string(st.channels()));
  }
  const std::size_t sp = s.spatial();
  const std::size_t count = sp * std::size_t(s.n);
  if (count == 0) throw ShapeError("batchnorm: zero-size spatial extent " + s.str());

  Tensor<Scalar> y(s);
  if (cache) {
    cache->mode = mode;
    cache->inv_std.resize(s.c);
    cache->normalized = Tensor<Scalar>(s);
  }
  for (int c = 0; c < s.c; ++c) {
    double mean, var;
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const Scalar* p = x.channel(n, c);
        for (std::size_t i = 0; i < sp; ++i) sum += double(p[i]);
      }
      mean = sum / double(count);
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const Scalar* p = x.channel(n, c);
        for (std::size_t i = 0; i < sp; ++i) {
          const double dv = double(p[i]) - mean;
          sq += dv * dv;
        }
      }
      var = sq / double(count);
      const double unbiased = count > 1 ? sq / double(count - 1) : var;
      const double m = double(st.momentum);
      st.running_mean[c] = Scalar((1.0 - m) * double(st.running_mean[c]) + m * mean);
      st.running_var[c] = Scalar((1.0 - m) * double(st.running_var[c]) + m * unbiased);
    } else {
      mean = double(st.running_mean[c]);
      var = double(st.running_var[c]);
    }
    const double istd = 1.0 / std::sqrt(var + double(st.eps));
    const Scalar gamma = st.scale[c], beta = st.shift[c];
    for (int n = 0; n < s.n; ++n) {
      const Scalar* p = x.channel(n, c);
      Scalar* q = y.channel(n, c);
      Scalar* h = cache ? cache->normalized.channel(n, c) : nullptr;
      for (std::size_t i = 0; i < sp; ++i) {
        const Scalar xh = Scalar((double(p[i]) - mean) * istd);
        q[i] = gamma * xh + beta;
        if (h) h[i] = xh;
      }
    }
    if (cache) cache->inv_std[c] = Scalar(istd);
  }
  return y;
}

template <typename Scalar>
struct BatchNormGrads {
  Tensor<Scalar> input;
  Vector<Scalar> scale;
  Vector<Scalar> shift;
};

template <typename Scalar>
BatchNormGrads<Scalar> batchnorm_backward(const BatchNormState<Scalar>& st, const BatchNormCache<Scalar>& cache,
                                          const Tensor<Scalar>& grad_out) {
  const Shape5& s = grad_out.shape();
  const std::size_t sp = s.spatial();
  const double count = double(sp) * s.n;
  BatchNormGrads<Scalar> g{Tensor<Scalar>(s), Vector<Scalar>::Zero(s.c), Vector<Scalar>::Zero(s.c)};
  for (int c = 0; c < s.c; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const Scalar* go = grad_out.channel(n, c);
      const Scalar* xh = cache.normalized.channel(n, c);
      for (std::size_t i = 0; i < sp; ++i) {
        sum_g += double(go[i]);
        sum_gx += double(go[i]) * double(xh[i]);
      }
    }
    g.shift[c] = Scalar(sum_g);
    g.scale[c] = Scalar(sum_gx);
    const double gamma_istd = double(st.scale[c]) * double(cache.inv_std[c]);
    for (int n = 0; n < s.n; ++n) {
      const Scalar* go = grad_out.channel(n, c);
      const Scalar* xh = cache.normalized.channel(n, c);
      Scalar* gi = g.input.channel(n, c);
      if (cache.mode == Mode::Train) {
        for (std::size_t i = 0; i < sp; ++i)
          gi[i] = Scalar(gamma_istd * (double(go[i]) - sum_g / count - double(xh[i]) * sum_gx / count));
      } else {
        for (std::size_t i = 0; i < sp; ++i) gi[i] = Scalar(gamma_istd * double(go[i]));
      }
    }
  }
  return g;
}

enum class Activation { ReLU, Sigmoid, Softmax2 };

template <typename Scalar>
Tensor<Scalar> activation(const Tensor<Scalar>& x, Activation kind) {
  Tensor<Scalar> y(x.shape());
  switch (kind) {
    case Activation::ReLU:
      y.array() = x.array().max(Scalar(0));
      break;
    case Activation::Sigmoid:
      y.array() = Scalar(1) / (Scalar(1) + (-x.array()).exp());
      break;
    case Activation::Softmax2: {
      if (x.shape().per_sample() != 2) throw ShapeError("softmax2: expected 2 logits per example, got " + x.shape().str());
      for (int n = 0; n < x.shape().n; ++n) {
        const Scalar a = x[2 * n], b = x[2 * n + 1];
        const Scalar m = std::max(a, b);
        const Scalar ea = std::exp(a - m), eb = std::exp(b - m);
        y[2 * n] = ea / (ea + eb);
        y[2 * n + 1] = eb / (ea + eb);
      }
      break;
    }
  }
  return y;
}

/// Inverted dropout. Train mode zeroes each value with probability `rate` and
/// scales survivors by 1/(1-rate); eval mode is the identity. `mask`, when
/// given, receives the per-element multiplier.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, Mode mode, std::uint64_t seed,
                       std::vector<Scalar>* mask = nullptr) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (mode == Mode::Eval || rate == 0.0) {
    if (mask) mask->assign(x.size(), Scalar(1));
    return x;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
  Tensor<Scalar> y(x.shape());
  if (mask) mask->resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Scalar m = u(rng) < rate ? Scalar(0) : keep_scale;
    y[i] = x[i] * m;
    if (mask) (*mask)[i] = m;
  }
  return y;
}

/// Affine map over the flattened per-sample features. W is out x in, row-major.
template <typename Scalar, typename Derived>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Eigen::MatrixBase<Derived>& W, const Vector<Scalar>& b) {
  const int n = x.shape().n;
  const Eigen::Index in = Eigen::Index(x.shape().per_sample());
  if (in != W.cols()) {
    throw ShapeError("linear: input has " + std::to_string(in) + " features, weight expects " + std::to_string(W.cols()));
  }
  if (b.size() != W.rows()) throw ShapeError("linear: bias length mismatch");
  Tensor<Scalar> y({n, int(W.rows()), 1, 1, 1});
  Eigen::Map<const RowMatrix<Scalar>> X(x.data(), n, in);
  Eigen::Map<RowMatrix<Scalar>> Y(y.data(), n, W.rows());
  Y.noalias() = X * W.transpose();
  Y.rowwise() += b.transpose();
  return y;
}

// ---------------------------------------------------------------------------
// Layer objects: one per network node, owning parameters and the state the
// backward pass needs.
// ---------------------------------------------------------------------------

enum class LayerKind : std::uint8_t {
  Input = 0,
  ConvDense = 1,
  ConvCross = 2,
  ConvTranspose = 3,
  ReLU = 4,
  Sigmoid = 5,
  BatchNorm = 6,
  MaxPool = 7,
  Dropout = 8,
  Flatten = 9,
  Linear = 10,
  Add = 11,
  Concat = 12,
};

std::string to_string(LayerKind kind);

template <typename Scalar>
struct ParamRef {
  std::string name;
  Vector<Scalar>* value;
  Vector<Scalar>* grad;
};

template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  virtual Shape5 output_shape(const Shape5& in) const = 0;
  /// Training-path forward; keeps whatever backward() needs.
  virtual Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, std::uint64_t seed) = 0;
  /// Returns the input gradient and accumulates parameter gradients.
  virtual Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) = 0;
  /// Eval-mode forward without side effects; safe to call concurrently.
  virtual Tensor<Scalar> infer(const Tensor<Scalar>& x) const = 0;
  virtual std::vector<ParamRef<Scalar>> params() { return {}; }
  /// Non-learned state that still belongs in a checkpoint.
  virtual std::vector<Vector<Scalar>*> buffers() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;

  void zero_grad() {
    for (auto& p : params()) p.grad->setZero();
  }
  /// Layers fed directly by the network input may skip their input gradient.
  void set_input_grad(bool on) { input_grad_ = on; }
  bool input_grad() const { return input_grad_; }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& p : params()) n += std::size_t(p.value->size());
    return n;
  }

 protected:
  bool input_grad_ = true;
};

template <typename Scalar>
class ConvDenseLayer final : public Layer<Scalar> {
 public:
  ConvDenseLayer(int cin, int cout, int k, int stride, Padding padding, bool bias)
      : kernel_(cout, cin, k, bias), grad_(cout, cin, k, bias), stride_(stride), padding_(padding) {}

  LayerKind kind() const override { return LayerKind::ConvDense; }
  Shape5 output_shape(const Shape5& in) const override {
    const auto g = detail::conv_geometry(in, kernel_.k, stride_, padding_);
    return {in.n, kernel_.out_channels, g.od, g.oh, g.ow};
  }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, std::uint64_t) override {
    input_ = x;
    return conv3d_dense(x, kernel_, stride_, padding_);
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override {
    auto g = conv3d_dense_backward(input_, kernel_, grad_out, stride_, padding_, this->input_grad_);
    grad_.weights += g.kernel.weights;
    if (kernel_.has_bias()) grad_.bias += g.kernel.bias;
    return std::move(g.input);
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override { return conv3d_dense(x, kernel_, stride_, padding_); }
  std::vector<ParamRef<Scalar>> params() override {
    std::vector<ParamRef<Scalar>> p{{"weight", &kernel_.weights, &grad_.weights}};
    if (kernel_.has_bias()) p.push_back({"bias", &kernel_.bias, &grad_.bias});
    return p;
  }
  std::unique_ptr<Layer<Scalar>> clone() const override {
    auto c = std::make_unique<ConvDenseLayer>(*this);
    c->input_ = Tensor<Scalar>();
    return c;
  }

  DenseKernel3D<Scalar>& kernel() { return kernel_; }
  const DenseKernel3D<Scalar>& kernel() const { return kernel_; }
  int stride() const { return stride_; }
  Padding padding() const { return padding_; }

 private:
  DenseKernel3D<Scalar> kernel_;
  DenseKernel3D<Scalar> grad_;
  int stride_;
  Padding padding_;
  Tensor<Scalar> input_;
};

template <typename Scalar>
class ConvCrossLayer final : public Layer<Scalar> {
 public:
  ConvCrossLayer(int cin, int cout, int length, bool bias) : kernel_(cout, cin, length, bias), grad_(cout, cin, length, bias) {}

  LayerKind kind() const override { return LayerKind::ConvCross; }
  Shape5 output_shape(const Shape5& in) const override { return {in.n, kernel_.out_channels, in.d, in.h, in.w}; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, std::uint64_t) override {
    input_ = x;
    return conv3d_cross(x, kernel_);
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override {
    auto g = conv3d_cross_backward(input_, kernel_, grad_out);
    for (int a = 0; a < 3; ++a) grad_.filters[a] += g.kernel.filters[a];
    if (kernel_.has_bias()) grad_.bias += g.kernel.bias;
    return std::move(g.input);
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override { return conv3d_cross(x, kernel_); }
  std::vector<ParamRef<Scalar>> params() override {
    std::vector<ParamRef<Scalar>> p{{"filter_x", &kernel_.filters[0], &grad_.filters[0]},
                                    {"filter_y", &kernel_.filters[1], &grad_.filters[1]},
                                    {"filter_z", &kernel_.filters[2], &grad_.filters[2]}};
    if (kernel_.has_bias()) p.push_back({"bias", &kernel_.bias, &grad_.bias});
    return p;
  }
  std::unique_ptr<Layer<Scalar>> clone() const override {
    auto c = std::make_unique<ConvCrossLayer>(*this);
    c->input_ = Tensor<Scalar>();
    return c;
  }

  CrossKernel3D<Scalar>& kernel() { return kernel_; }
  const CrossKernel3D<Scalar>& kernel() const { return kernel_; }

 private:
  CrossKernel3D<Scalar> kernel_;
  CrossKernel3D<Scalar> grad_;
  Tensor<Scalar> input_;
};

/// 2x up-sampling (k = stride = 2). Maps `cin` channels to `cout`.
template <typename Scalar>
class TransposeConvLayer final : public Layer<Scalar> {
 public:
  TransposeConvLayer(int cin, int cout, bool bias)
      : kernel_(cin, cout, 2, false),
        grad_(cin, cout, 2, false),
        bias_(bias ? Vector<Scalar>::Zero(cout) : Vector<Scalar>()),
        bias_grad_(bias ? Vector<Scalar>::Zero(cout) : Vector<Scalar>()) {}

  LayerKind kind() const override { return LayerKind::ConvTranspose; }
  Shape5 output_shape(const Shape5& in) const override {
    return {in.n, kernel_.in_channels, 2 * in.d, 2 * in.h, 2 * in.w};
  }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, std::uint64_t) override {
    input_ = x;
    return transpose_conv3d(x, kernel_, bias_);
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override {
    auto g = transpose_conv3d_backward(input_, kernel_, grad_out, bias_.size() > 0);
    grad_.weights += g.kernel.weights;
    if (bias_.size()) bias_grad_ += g.bias;
    return std::move(g.input);
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override { return transpose_conv3d(x, kernel_, bias_); }
  std::vector<ParamRef<Scalar>> params() override {
    std::vector<ParamRef<Scalar>> p{{"weight", &kernel_.weights, &grad_.weights}};
    if (bias_.size()) p.push_back({"bias", &bias_, &bias_grad_});
    return p;
  }
  std::unique_ptr<Layer<Scalar>> clone() const override {
    auto c = std::make_unique<TransposeConvLayer>(*this);
    c->input_ = Tensor<Scalar>();
    return c;
  }

  DenseKernel3D<Scalar>& kernel() { return kernel_; }

 private:
  DenseKernel3D<Scalar> kernel_;  // shaped as the adjoint down-sampling conv: out=cin, in=cout
  DenseKernel3D<Scalar> grad_;
  Vector<Scalar> bias_;
  Vector<Scalar> bias_grad_;
  Tensor<Scalar> input_;
};

template <typename Scalar>
class ActivationLayer final : public Layer<Scalar> {
 public:
  explicit ActivationLayer(Activation a) : act_(a) {
    if (a == Activation::Softmax2) throw std::invalid_argument("ActivationLayer: softmax2 lives in the loss");
  }
  LayerKind kind() const override { return act_ == Activation::ReLU ? LayerKind::ReLU : LayerKind::Sigmoid; }
  Shape5 output_shape(const Shape5& in) const override { return in; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, std::uint64_t) override {
    output_ = activation(x, act_);
    return output_;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override {
    Tensor<Scalar> g(grad_out.shape());
    if (act_ == Activation::ReLU)
      g.array() = (output_.array() > Scalar(0)).select(grad_out.array(), Scalar(0));
    else
      g.array() = grad_out.array() * output_.array() * (Scalar(1) - output_.array());
    return g;
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override { return activation(x, act_); }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<ActivationLayer>(act_); }

 private:
  Activation act_;
  Tensor<Scalar> output_;
};

template <typename Scalar>
class BatchNormLayer final : public Layer<Scalar> {
 public:
  explicit BatchNormLayer(int channels) : state_(channels), scale_grad_(Vector<Scalar>::Zero(channels)), shift_grad_(Vector<Scalar>::Zero(channels)) {}

  LayerKind kind() const override { return LayerKind::BatchNorm; }
  Shape5 output_shape(const Shape5& in) const override { return in; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, std::uint64_t) override {
    return batchnorm(x, state_, mode, &cache_);
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override {
    auto g = batchnorm_backward(state_, cache_, grad_out);
    scale_grad_ += g.scale;
    shift_grad_ += g.shift;
    return std::move(g.input);
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    auto st = state_;
    return batchnorm(x, st, Mode::Eval);
  }
  std::vector<ParamRef<Scalar>> params() override {
    return {{"scale", &state_.scale, &scale_grad_}, {"shift", &state_.shift, &shift_grad_}};
  }
  std::vector<Vector<Scalar>*> buffers() override { return {&state_.running_mean, &state_.running_var}; }
  std::unique_ptr<Layer<Scalar>> clone() const override {
    auto c = std::make_unique<BatchNormLayer>(*this);
    c->cache_ = BatchNormCache<Scalar>();
    return c;
  }

  BatchNormState<Scalar>& state() { return state_; }
  const BatchNormState<Scalar>& state() const { return state_; }

 private:
  BatchNormState<Scalar> state_;
  Vector<Scalar> scale_grad_;
  Vector<Scalar> shift_grad_;
  BatchNormCache<Scalar> cache_;
};

template <typename Scalar>
class MaxPoolLayer final : public Layer<Scalar> {
 public:
  LayerKind kind() const override { return LayerKind::MaxPool; }
  Shape5 output_shape(const Shape5& in) const override {
    if (in.d % 2 || in.h % 2 || in.w % 2) throw ShapeError("maxpool3d: odd spatial dims " + in.str());
    return {in.n, in.c, in.d / 2, in.h / 2, in.w / 2};
  }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, std::uint64_t) override {
    in_shape_ = x.shape();
    return maxpool3d(x, &argmax_);
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override {
    return maxpool3d_backward(in_shape_, argmax_, grad_out);
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override { return maxpool3d(x); }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<MaxPoolLayer>(); }

 private:
  Shape5 in_shape_{};
  std::vector<std::uint32_t> argmax_;
};

template <typename Scalar>
class DropoutLayer final : public Layer<Scalar> {
 public:
  explicit DropoutLayer(double rate) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  }
  LayerKind kind() const override { return LayerKind::Dropout; }
  Shape5 output_shape(const Shape5& in) const override { return in; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode, std::uint64_t seed) override {
    return dropout(x, rate_, mode, seed, &mask_);
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override {
    Tensor<Scalar> g(grad_out.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * mask_[i];
    return g;
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override { return x; }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<DropoutLayer>(rate_); }
  double rate() const { return rate_; }

 private:
  double rate_;
  std::vector<Scalar> mask_;
};

template <typename Scalar>
class FlattenLayer final : public Layer<Scalar> {
 public:
  LayerKind kind() const override { return LayerKind::Flatten; }
  Shape5 output_shape(const Shape5& in) const override { return {in.n, int(in.per_sample()), 1, 1, 1}; }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, std::uint64_t) override {
    in_shape_ = x.shape();
    return infer(x);
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override {
    Tensor<Scalar> g = grad_out;
    g.reshape(in_shape_);
    return g;
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override {
    Tensor<Scalar> y = x;
    y.reshape(output_shape(x.shape()));
    return y;
  }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<FlattenLayer>(); }

 private:
  Shape5 in_shape_{};
};

template <typename Scalar>
class LinearLayer final : public Layer<Scalar> {
 public:
  LinearLayer(int in, int out)
      : weight_(Vector<Scalar>::Zero(Eigen::Index(in) * out)),
        bias_(Vector<Scalar>::Zero(out)),
        weight_grad_(Vector<Scalar>::Zero(Eigen::Index(in) * out)),
        bias_grad_(Vector<Scalar>::Zero(out)),
        in_(in),
        out_(out) {}

  LayerKind kind() const override { return LayerKind::Linear; }
  Shape5 output_shape(const Shape5& in) const override {
    if (int(in.per_sample()) != in_) {
      throw ShapeError("linear: input has " + std::to_string(in.per_sample()) + " features, weight expects " +
                       std::to_string(in_));
    }
    return {in.n, out_, 1, 1, 1};
  }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode, std::uint64_t) override {
    input_ = x;
    return infer(x);
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& grad_out) override {
    const int n = input_.shape().n;
    Eigen::Map<const RowMatrix<Scalar>> X(input_.data(), n, in_);
    Eigen::Map<const RowMatrix<Scalar>> G(grad_out.data(), n, out_);
    Eigen::Map<RowMatrix<Scalar>> gW(weight_grad_.data(), out_, in_);
    gW.noalias() += G.transpose() * X;
    bias_grad_ += G.colwise().sum().transpose();
    Tensor<Scalar> gx(input_.shape());
    Eigen::Map<RowMatrix<Scalar>> GX(gx.data(), n, in_);
    GX.noalias() = G * weight();
    return gx;
  }
  Tensor<Scalar> infer(const Tensor<Scalar>& x) const override { return linear(x, weight(), bias_); }
  std::vector<ParamRef<Scalar>> params() override {
    return {{"weight", &weight_, &weight_grad_}, {"bias", &bias_, &bias_grad_}};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override {
    auto c = std::make_unique<LinearLayer>(*this);
    c->input_ = Tensor<Scalar>();
    return c;
  }

  Eigen::Map<const RowMatrix<Scalar>> weight() const { return {weight_.data(), out_, in_}; }
  Eigen::Map<RowMatrix<Scalar>> weight() { return {weight_.data(), out_, in_}; }
  Vector<Scalar>& bias() { return bias_; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  Vector<Scalar> weight_;  // out x in, row-major
  Vector<Scalar> bias_;
  Vector<Scalar> weight_grad_;
  Vector<Scalar> bias_grad_;
  int in_;
  int out_;
  Tensor<Scalar> input_;
};

}  // namespace deepbv
