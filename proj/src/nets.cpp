#include "deepbv/nets.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace deepbv {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Input: return "input";
    case LayerKind::ConvDense: return "conv";
    case LayerKind::ConvCross: return "conv_cross";
    case LayerKind::ConvTranspose: return "conv_transpose";
    case LayerKind::ReLU: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Linear: return "linear";
    case LayerKind::Add: return "add";
    case LayerKind::Concat: return "concat";
  }
  return "unknown";
}

std::string to_string(Stream s) {
  switch (s) {
    case Stream::Deep: return "deep";
    case Stream::FullRes: return "full_res";
    case Stream::Fusion: return "fusion";
    case Stream::Classifier: return "classifier";
  }
  return "unknown";
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::string node_name(int i, const LayerDesc& d) { return "node " + std::to_string(i) + " (" + to_string(d.kind) + ")"; }

std::unique_ptr<Layer<float>> make_layer(const LayerDesc& d) {
  switch (d.kind) {
    case LayerKind::ConvDense:
      return std::make_unique<ConvDenseLayer<float>>(d.in_channels, d.out_channels, d.kernel, d.stride, d.padding, d.bias);
    case LayerKind::ConvCross:
      return std::make_unique<ConvCrossLayer<float>>(d.in_channels, d.out_channels, d.kernel, d.bias);
    case LayerKind::ConvTranspose:
      return std::make_unique<TransposeConvLayer<float>>(d.in_channels, d.out_channels, d.bias);
    case LayerKind::ReLU: return std::make_unique<ActivationLayer<float>>(Activation::ReLU);
    case LayerKind::Sigmoid: return std::make_unique<ActivationLayer<float>>(Activation::Sigmoid);
    case LayerKind::BatchNorm: return std::make_unique<BatchNormLayer<float>>(d.out_channels);
    case LayerKind::MaxPool: return std::make_unique<MaxPoolLayer<float>>();
    case LayerKind::Dropout: return std::make_unique<DropoutLayer<float>>(d.dropout);
    case LayerKind::Flatten: return std::make_unique<FlattenLayer<float>>();
    case LayerKind::Linear: return std::make_unique<LinearLayer<float>>(d.in_channels, d.out_channels);
    case LayerKind::Input:
    case LayerKind::Add:
    case LayerKind::Concat: return nullptr;
  }
  return nullptr;
}

Shape5 node_shape(int i, const LayerDesc& d, const std::vector<Shape5>& shapes) {
  auto in = [&](std::size_t k) { return shapes[std::size_t(d.inputs[k])]; };
  auto need_channels = [&](const Shape5& s) {
    if (s.c != d.in_channels) {
      throw ShapeError(node_name(i, d) + " expects " + std::to_string(d.in_channels) + " channels, producer gives " +
                       std::to_string(s.c));
    }
  };
  switch (d.kind) {
    case LayerKind::Input: throw ShapeError("input node is only allowed at index 0");
    case LayerKind::ConvDense: {
      const Shape5 s = in(0);
      need_channels(s);
      const auto g = detail::conv_geometry(s, d.kernel, d.stride, d.padding);
      return {s.n, d.out_channels, g.od, g.oh, g.ow};
    }
    case LayerKind::ConvCross: {
      const Shape5 s = in(0);
      need_channels(s);
      if (d.kernel % 2 == 0) throw ShapeError(node_name(i, d) + " needs an odd filter length");
      return {s.n, d.out_channels, s.d, s.h, s.w};
    }
    case LayerKind::ConvTranspose: {
      const Shape5 s = in(0);
      need_channels(s);
      return {s.n, d.out_channels, 2 * s.d, 2 * s.h, 2 * s.w};
    }
    case LayerKind::BatchNorm: {
      const Shape5 s = in(0);
      if (s.c != d.out_channels) throw ShapeError(node_name(i, d) + " channel mismatch");
      return s;
    }
    case LayerKind::ReLU:
    case LayerKind::Sigmoid:
    case LayerKind::Dropout: return in(0);
    case LayerKind::MaxPool: {
      const Shape5 s = in(0);
      if (s.d % 2 || s.h % 2 || s.w % 2) throw ShapeError(node_name(i, d) + " pools odd dims " + s.str());
      return {s.n, s.c, s.d / 2, s.h / 2, s.w / 2};
    }
    case LayerKind::Flatten: {
      const Shape5 s = in(0);
      return {s.n, int(s.per_sample()), 1, 1, 1};
    }
    case LayerKind::Linear: {
      const Shape5 s = in(0);
      if (int(s.per_sample()) != d.in_channels) throw ShapeError(node_name(i, d) + " feature count mismatch");
      return {s.n, d.out_channels, 1, 1, 1};
    }
    case LayerKind::Add: {
      if (d.inputs.size() != 2) throw ShapeError(node_name(i, d) + " takes exactly two inputs");
      if (!(in(0) == in(1))) throw ShapeError(node_name(i, d) + " adds " + in(0).str() + " and " + in(1).str());
      return in(0);
    }
    case LayerKind::Concat: {
      if (d.inputs.size() < 2) throw ShapeError(node_name(i, d) + " needs at least two inputs");
      Shape5 s = in(0);
      for (std::size_t k = 1; k < d.inputs.size(); ++k) {
        const Shape5 t = in(k);
        if (t.d != s.d || t.h != s.h || t.w != s.w) throw ShapeError(node_name(i, d) + " joins mismatched resolutions");
        s.c += t.c;
      }
      return s;
    }
  }
  throw ShapeError("unknown layer kind");
}

std::size_t params_of(const LayerDesc& d, CountMode mode) {
  const std::size_t cin = std::size_t(d.in_channels), cout = std::size_t(d.out_channels), k = std::size_t(d.kernel);
  const std::size_t bias = d.bias ? cout : 0;
  switch (d.kind) {
    case LayerKind::ConvDense: return cout * cin * k * k * k + bias;
    case LayerKind::ConvCross: return cout * cin * (mode == CountMode::Actual ? 3 * k : k * k * k) + bias;
    case LayerKind::ConvTranspose: return cin * cout * 8 + bias;
    case LayerKind::BatchNorm: return 2 * cout;
    case LayerKind::Linear: return cin * cout + cout;
    default: return 0;
  }
}

// Concatenates along channels, sample by sample.
TensorF concat_channels(const std::vector<const TensorF*>& parts) {
  Shape5 s = parts.front()->shape();
  s.c = 0;
  for (const TensorF* p : parts) s.c += p->shape().c;
  TensorF out(s);
  for (int n = 0; n < s.n; ++n) {
    float* dst = out.sample(n);
    for (const TensorF* p : parts) {
      const std::size_t len = p->shape().per_sample();
      std::copy(p->sample(n), p->sample(n) + len, dst);
      dst += len;
    }
  }
  return out;
}

void accumulate(TensorF& target, TensorF&& g) {
  if (target.empty())
    target = std::move(g);
  else
    target.vec() += g.vec();
}

}  // namespace

void NetSpec::validate() const { (void)node_shapes(); }

std::vector<Shape5> NetSpec::node_shapes() const {
  if (layers.empty() || layers[0].kind != LayerKind::Input) throw ShapeError("net spec must start with an input node");
  if (output <= 0 || output >= int(layers.size())) throw ShapeError("net spec output index out of range");
  if (input_side <= 0 || input_channels <= 0) throw ShapeError("net spec input shape must be positive");
  std::vector<Shape5> shapes(layers.size());
  shapes[0] = {1, input_channels, input_side, input_side, input_side};
  std::vector<int> consumers(layers.size(), 0);
  for (int i = 1; i < int(layers.size()); ++i) {
    const LayerDesc& d = layers[std::size_t(i)];
    if (d.inputs.empty()) throw ShapeError(node_name(i, d) + " has no inputs");
    const bool multi = d.kind == LayerKind::Add || d.kind == LayerKind::Concat;
    if (!multi && d.inputs.size() != 1) throw ShapeError(node_name(i, d) + " takes exactly one input");
    for (int src : d.inputs) {
      if (src < 0 || src >= i) throw ShapeError(node_name(i, d) + " consumes node " + std::to_string(src) + " (not earlier)");
      ++consumers[std::size_t(src)];
    }
    shapes[std::size_t(i)] = node_shape(i, d, shapes);
  }
  for (int i = 0; i < int(layers.size()); ++i) {
    if (i != output && consumers[std::size_t(i)] == 0) {
      throw ShapeError(node_name(i, layers[std::size_t(i)]) + " is a second head; a net has exactly one output");
    }
  }
  return shapes;
}

Net::Net(NetSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  layers_.reserve(spec_.layers.size());
  for (const auto& d : spec_.layers) {
    layers_.push_back(make_layer(d));
    if (layers_.back() && d.inputs == std::vector<int>{0}) layers_.back()->set_input_grad(false);
  }
}

Net::Net(const Net& other) : spec_(other.spec_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l ? l->clone() : nullptr);
}

Net& Net::operator=(const Net& other) {
  if (this != &other) {
    Net tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

void Net::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i]) continue;
    const LayerDesc& d = spec_.layers[i];
    double fan_in = 1.0;
    switch (d.kind) {
      case LayerKind::ConvDense: fan_in = double(d.in_channels) * d.kernel * d.kernel * d.kernel; break;
      case LayerKind::ConvCross: fan_in = double(d.in_channels) * 3 * d.kernel; break;
      case LayerKind::ConvTranspose: fan_in = double(d.in_channels); break;
      case LayerKind::Linear: fan_in = double(d.in_channels); break;
      default: break;
    }
    const double stddev = std::sqrt(2.0 / fan_in);
    for (auto& p : layers_[i]->params()) {
      if (p.name == "bias" || p.name == "shift") {
        p.value->setZero();
      } else if (p.name == "scale") {
        p.value->setOnes();
      } else {
        for (Eigen::Index k = 0; k < p.value->size(); ++k) (*p.value)[k] = float(stddev * normal(rng));
      }
    }
    if (d.kind == LayerKind::BatchNorm) {
      auto* bn = static_cast<BatchNormLayer<float>*>(layers_[i].get());
      bn->state().running_mean.setZero();
      bn->state().running_var.setOnes();
    }
  }
  zero_grad();
}

void Net::check_input(const TensorF& x) const {
  const Shape5 expect = input_shape(x.shape().n);
  if (!(x.shape() == expect) || x.shape().n < 1) {
    throw ShapeError("net input " + x.shape().str() + " does not match declared input " + expect.str());
  }
}

TensorF Net::forward(const TensorF& x, Mode mode, std::uint64_t seed) {
  check_input(x);
  const std::size_t n = spec_.layers.size();
  std::vector<int> pending(n, 0);
  for (const auto& d : spec_.layers)
    for (int src : d.inputs) ++pending[std::size_t(src)];
  std::vector<TensorF> acts(n);
  acts[0] = x;
  auto release = [&](int src) {
    if (--pending[std::size_t(src)] == 0 && src != spec_.output) acts[std::size_t(src)] = TensorF();
  };
  for (std::size_t i = 1; i < n; ++i) {
    const LayerDesc& d = spec_.layers[i];
    if (d.kind == LayerKind::Add) {
      acts[i] = acts[std::size_t(d.inputs[0])];
      acts[i].vec() += acts[std::size_t(d.inputs[1])].vec();
    } else if (d.kind == LayerKind::Concat) {
      std::vector<const TensorF*> parts;
      for (int src : d.inputs) parts.push_back(&acts[std::size_t(src)]);
      acts[i] = concat_channels(parts);
    } else {
      acts[i] = layers_[i]->forward(acts[std::size_t(d.inputs[0])], mode, splitmix64(seed ^ splitmix64(i)));
    }
    for (int src : d.inputs) release(src);
  }
  return std::move(acts[std::size_t(spec_.output)]);
}

void Net::backward(const TensorF& grad_out) {
  const std::size_t n = spec_.layers.size();
  std::vector<TensorF> grads(n);
  grads[std::size_t(spec_.output)] = grad_out;
  const std::vector<Shape5> shapes = spec_.node_shapes();
  for (std::size_t i = n; i-- > 1;) {
    if (grads[i].empty()) continue;
    const LayerDesc& d = spec_.layers[i];
    if (d.kind == LayerKind::Add) {
      TensorF copy = grads[i];
      accumulate(grads[std::size_t(d.inputs[0])], std::move(copy));
      accumulate(grads[std::size_t(d.inputs[1])], std::move(grads[i]));
    } else if (d.kind == LayerKind::Concat) {
      const Shape5 gs = grads[i].shape();
      int offset = 0;
      for (int src : d.inputs) {
        Shape5 part = shapes[std::size_t(src)];
        part.n = gs.n;
        TensorF g(part);
        const std::size_t len = part.per_sample();
        for (int b = 0; b < gs.n; ++b) {
          const float* from = grads[i].sample(b) + std::size_t(offset) * gs.spatial();
          std::copy(from, from + len, g.sample(b));
        }
        offset += part.c;
        accumulate(grads[std::size_t(src)], std::move(g));
      }
    } else {
      TensorF g = layers_[i]->backward(grads[i]);
      if (d.inputs[0] != 0) accumulate(grads[std::size_t(d.inputs[0])], std::move(g));
    }
    grads[i] = TensorF();
  }
}

TensorF Net::infer(const TensorF& x) const {
  check_input(x);
  const std::size_t n = spec_.layers.size();
  std::vector<int> pending(n, 0);
  for (const auto& d : spec_.layers)
    for (int src : d.inputs) ++pending[std::size_t(src)];
  std::vector<TensorF> acts(n);
  acts[0] = x;
  for (std::size_t i = 1; i < n; ++i) {
    const LayerDesc& d = spec_.layers[i];
    if (d.kind == LayerKind::Add) {
      acts[i] = acts[std::size_t(d.inputs[0])];
      acts[i].vec() += acts[std::size_t(d.inputs[1])].vec();
    } else if (d.kind == LayerKind::Concat) {
      std::vector<const TensorF*> parts;
      for (int src : d.inputs) parts.push_back(&acts[std::size_t(src)]);
      acts[i] = concat_channels(parts);
    } else {
      acts[i] = layers_[i]->infer(acts[std::size_t(d.inputs[0])]);
    }
    for (int src : d.inputs)
      if (--pending[std::size_t(src)] == 0 && src != spec_.output) acts[std::size_t(src)] = TensorF();
  }
  return std::move(acts[std::size_t(spec_.output)]);
}

void Net::zero_grad() {
  for (auto& l : layers_)
    if (l) l->zero_grad();
}

std::vector<ParamRef<float>> Net::params() {
  std::vector<ParamRef<float>> out;
  for (auto& l : layers_)
    if (l)
      for (auto& p : l->params()) out.push_back(p);
  return out;
}

std::vector<Vector<float>*> Net::buffers() {
  std::vector<Vector<float>*> out;
  for (auto& l : layers_)
    if (l)
      for (auto* b : l->buffers()) out.push_back(b);
  return out;
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

namespace {

int nonlinearity(NetSpec& spec, int x, int channels, LayerOrder order, Stream stream) {
  LayerDesc relu{.kind = LayerKind::ReLU, .inputs = {}, .stream = stream};
  LayerDesc bn{.kind = LayerKind::BatchNorm, .inputs = {}, .in_channels = channels, .out_channels = channels, .stream = stream};
  if (order == LayerOrder::ReluThenBn) {
    relu.inputs = {x};
    x = spec.add(relu);
    bn.inputs = {x};
    return spec.add(bn);
  }
  bn.inputs = {x};
  x = spec.add(bn);
  relu.inputs = {x};
  return spec.add(relu);
}

int conv_block(NetSpec& spec, int x, int cin, int cout, int k, int stride, Padding pad, LayerOrder order, Stream stream,
               LayerKind kind = LayerKind::ConvDense) {
  const int conv = spec.add({.kind = kind,
                             .inputs = {x},
                             .in_channels = cin,
                             .out_channels = cout,
                             .kernel = k,
                             .stride = stride,
                             .padding = pad,
                             .bias = true,
                             .stream = stream});
  return nonlinearity(spec, conv, cout, order, stream);
}

int up_block(NetSpec& spec, int x, int cin, int cout, LayerOrder order) {
  const int up = spec.add({.kind = LayerKind::ConvTranspose,
                           .inputs = {x},
                           .in_channels = cin,
                           .out_channels = cout,
                           .kernel = 2,
                           .stride = 2,
                           .padding = Padding::Valid,
                           .bias = true,
                           .stream = Stream::Deep});
  return nonlinearity(spec, up, cout, order, Stream::Deep);
}

int residual(NetSpec& spec, int x, int body, Stream stream) {
  return spec.add({.kind = LayerKind::Add, .inputs = {x, body}, .stream = stream});
}

}  // namespace

NetSpec localization_spec(const LocalizationPlan& plan) {
  NetSpec spec;
  spec.input_channels = 1;
  spec.input_side = plan.input_side;
  int x = spec.add({.kind = LayerKind::Input, .inputs = {}, .stream = Stream::Classifier});
  int side = plan.input_side;
  int cin = 1;
  for (int width : plan.widths) {
    for (int j = 0; j < 2; ++j) {
      x = conv_block(spec, x, cin, width, plan.kernel, 1, Padding::Same, plan.order, Stream::Classifier);
      cin = width;
    }
    // At reduced input sizes the last block can land on an odd side; it then
    // keeps its resolution instead of pooling.
    if (side % 2 == 0 && side > 1) {
      x = spec.add({.kind = LayerKind::MaxPool, .inputs = {x}, .kernel = 2, .stride = 2, .stream = Stream::Classifier});
      side /= 2;
    }
    x = spec.add({.kind = LayerKind::Dropout, .inputs = {x}, .dropout = plan.block_dropout, .stream = Stream::Classifier});
  }
  x = spec.add({.kind = LayerKind::Flatten, .inputs = {x}, .stream = Stream::Classifier});
  const int features = cin * side * side * side;
  x = spec.add({.kind = LayerKind::Linear, .inputs = {x}, .in_channels = features, .out_channels = plan.hidden, .stream = Stream::Classifier});
  x = nonlinearity(spec, x, plan.hidden, plan.order, Stream::Classifier);
  x = spec.add({.kind = LayerKind::Dropout, .inputs = {x}, .dropout = plan.hidden_dropout, .stream = Stream::Classifier});
  x = spec.add({.kind = LayerKind::Linear, .inputs = {x}, .in_channels = plan.hidden, .out_channels = 2, .stream = Stream::Classifier});
  spec.output = x;
  spec.validate();
  return spec;
}

NetSpec segmentation_spec(const SegmentationPlan& plan) {
  if (plan.input_side % 16 != 0) throw ShapeError("segmentation input side must be divisible by 16");
  const int k = plan.kernel;
  const auto& e = plan.encoder;
  NetSpec spec;
  spec.input_channels = 1;
  spec.input_side = plan.input_side;
  const int input = spec.add({.kind = LayerKind::Input, .inputs = {}, .stream = Stream::Deep});

  // Full-resolution stream: three k^3 convs, residual on the equal-width pair.
  const int F = plan.full_res_width;
  int fr = conv_block(spec, input, 1, F, k, 1, Padding::Same, plan.order, Stream::FullRes);
  for (int j = 0; j < 2; ++j) {
    const int body = conv_block(spec, fr, F, F, k, 1, Padding::Same, plan.order, Stream::FullRes);
    fr = residual(spec, fr, body, Stream::FullRes);
  }

  // Deep stream encoder.
  std::array<int, 5> skip{};
  skip[0] = conv_block(spec, input, 1, e[0], k, 1, Padding::Same, plan.order, Stream::Deep);
  for (int level = 1; level < 5; ++level) {
    skip[std::size_t(level)] =
        conv_block(spec, skip[std::size_t(level - 1)], e[std::size_t(level - 1)], e[std::size_t(level)], 2, 2,
                   Padding::Valid, plan.order, Stream::Deep);
  }

  // Low-resolution processing: resolution-preserving residual layers.
  int x = skip[4];
  for (int j = 0; j < plan.lrp_layers; ++j) {
    const int body = conv_block(spec, x, e[4], e[4], k, 1, Padding::Same, plan.order, Stream::Deep,
                                plan.cross_lrp ? LayerKind::ConvCross : LayerKind::ConvDense);
    x = residual(spec, x, body, Stream::Deep);
  }

  // Decoder: up-sample, join the same-resolution encoder output, project back.
  for (int level = 3; level >= 0; --level) {
    const int w = e[std::size_t(level)];
    const int up = up_block(spec, x, e[std::size_t(level + 1)], w, plan.order);
    const int cat = spec.add({.kind = LayerKind::Concat, .inputs = {up, skip[std::size_t(level)]}, .stream = Stream::Deep});
    x = conv_block(spec, cat, 2 * w, w, 1, 1, Padding::Same, plan.order, Stream::Deep);
  }

  // Fusion: border refinement at full resolution, then the voxel head.
  const int G = plan.fusion_width;
  const int fused = spec.add({.kind = LayerKind::Concat, .inputs = {fr, x}, .stream = Stream::Fusion});
  spec.fusion_head = fused;
  int y = conv_block(spec, fused, F + e[0], G, k, 1, Padding::Same, plan.order, Stream::Fusion);
  y = conv_block(spec, y, G, G, k, 1, Padding::Same, plan.order, Stream::Fusion);
  y = spec.add({.kind = LayerKind::ConvDense, .inputs = {y}, .in_channels = G, .out_channels = 1, .kernel = 1, .stride = 1,
                .padding = Padding::Same, .bias = true, .stream = Stream::Fusion});
  y = spec.add({.kind = LayerKind::Sigmoid, .inputs = {y}, .stream = Stream::Fusion});
  spec.output = y;
  spec.validate();
  return spec;
}

Net build_localization_net(std::uint64_t seed, const LocalizationPlan& plan) {
  Net net(localization_spec(plan));
  net.initialize(seed);
  return net;
}

Net build_segmentation_net(std::uint64_t seed, const SegmentationPlan& plan) {
  Net net(segmentation_spec(plan));
  net.initialize(seed);
  return net;
}

ParameterCount count_parameters(const NetSpec& spec, CountMode mode) {
  ParameterCount pc;
  for (int i = 0; i < int(spec.layers.size()); ++i) {
    const std::size_t c = params_of(spec.layers[std::size_t(i)], mode);
    if (c == 0) continue;
    pc.layers.push_back({i, spec.layers[std::size_t(i)].kind, c});
    pc.total += c;
  }
  return pc;
}

ParameterCount count_parameters(const Net& net, CountMode mode) { return count_parameters(net.spec(), mode); }

ReceptiveField receptive_field(const NetSpec& spec) {
  struct Field {
    long rf = 1;
    long jump = 1;
  };
  std::vector<Field> f(spec.layers.size());
  for (std::size_t i = 1; i < spec.layers.size(); ++i) {
    const LayerDesc& d = spec.layers[i];
    Field in = f[std::size_t(d.inputs[0])];
    for (int src : d.inputs)
      if (f[std::size_t(src)].rf > in.rf) in = f[std::size_t(src)];
    switch (d.kind) {
      case LayerKind::ConvDense:
      case LayerKind::ConvCross:
        in.rf += long(d.kernel - 1) * in.jump;
        in.jump *= d.stride;
        break;
      case LayerKind::MaxPool:
        in.rf += in.jump;
        in.jump *= 2;
        break;
      case LayerKind::ConvTranspose:
        in.jump = std::max(1L, in.jump / 2);
        break;
      default: break;
    }
    f[i] = in;
  }
  const int at = spec.fusion_head >= 0 ? spec.fusion_head : spec.output;
  const Field r = f[std::size_t(at)];
  ReceptiveField out;
  out.size = {int(r.rf), int(r.rf), int(r.rf)};
  out.jump = {int(r.jump), int(r.jump), int(r.jump)};
  out.node = at;
  return out;
}

int count_dropout_sites(const NetSpec& spec, double rate) {
  return int(std::count_if(spec.layers.begin(), spec.layers.end(), [&](const LayerDesc& d) {
    return d.kind == LayerKind::Dropout && std::abs(d.dropout - rate) < 1e-12;
  }));
}

}  // namespace deepbv
