#pragma once

#include "deepbv/layers.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace deepbv {

/// Which part of the architecture a node belongs to.
enum class Stream : std::uint8_t { Deep = 0, FullRes = 1, Fusion = 2, Classifier = 3 };

/// Placement of the nonlinearity relative to batch normalization after each
/// convolution or hidden linear layer.
enum class LayerOrder : std::uint8_t { ReluThenBn = 0, BnThenRelu = 1 };

struct LayerDesc {
  LayerKind kind = LayerKind::Input;
  std::vector<int> inputs;  // producer node indices, all smaller than this node's
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  Padding padding = Padding::Same;
  bool bias = true;
  double dropout = 0.0;
  Stream stream = Stream::Deep;
};

/// Declarative network: node 0 is the input, nodes only consume earlier
/// nodes, `output` names the single head.
struct NetSpec {
  int input_channels = 1;
  int input_side = 0;  // inputs are cubes
  std::vector<LayerDesc> layers;
  int output = -1;
  int fusion_head = -1;  // first node of the fusion stage, or -1

  int add(LayerDesc d) {
    layers.push_back(std::move(d));
    return int(layers.size()) - 1;
  }
  /// Throws ShapeError on dangling or cyclic wiring and on channel or
  /// resolution mismatches between producer and consumer.
  void validate() const;
  /// Output shape of every node for a batch of one.
  std::vector<Shape5> node_shapes() const;
};

class Net {
 public:
  Net() = default;
  explicit Net(NetSpec spec);
  Net(const Net& other);
  Net& operator=(const Net& other);
  Net(Net&&) noexcept = default;
  Net& operator=(Net&&) noexcept = default;

  const NetSpec& spec() const { return spec_; }
  Shape5 input_shape(int batch = 1) const {
    return {batch, spec_.input_channels, spec_.input_side, spec_.input_side, spec_.input_side};
  }

  /// Fan-in scaled zero-mean normal weights, zero biases, identity batch norm.
  void initialize(std::uint64_t seed);

  /// Training-path forward; caches what backward() needs. Deterministic given
  /// (parameters, x, mode, seed).
  TensorF forward(const TensorF& x, Mode mode, std::uint64_t seed = 0);
  /// Back-propagates from the head and accumulates parameter gradients.
  void backward(const TensorF& grad_out);
  /// Eval-mode forward with no side effects; safe to run concurrently.
  TensorF infer(const TensorF& x) const;

  void zero_grad();
  std::vector<ParamRef<float>> params();
  std::vector<Vector<float>*> buffers();
  std::size_t size() const { return layers_.size(); }
  Layer<float>* layer(int i) { return layers_[std::size_t(i)].get(); }
  const Layer<float>* layer(int i) const { return layers_[std::size_t(i)].get(); }

 private:
  void check_input(const TensorF& x) const;

  NetSpec spec_;
  std::vector<std::unique_ptr<Layer<float>>> layers_;  // null for Input/Add/Concat
};

/// Channel plan of the localization classifier: four blocks of two 3^3 convs,
/// each block followed by 2^3 max pooling (while the side stays even) and
/// dropout, then flatten -> hidden linear (dropout) -> 2 logits.
struct LocalizationPlan {
  int input_side = 64;
  std::array<int, 4> widths{16, 32, 64, 64};
  int hidden = 256;
  int kernel = 3;
  double block_dropout = 0.15;
  double hidden_dropout = 0.4;
  LayerOrder order = LayerOrder::ReluThenBn;
};

/// Channel plan of the segmentation network. `encoder` holds the deep-stream
/// width at full resolution followed by the widths after each of the four
/// stride-2 down convolutions; the last one is the LRP width.
struct SegmentationPlan {
  int input_side = 128;
  int full_res_width = 8;
  std::array<int, 5> encoder{8, 16, 32, 64, 96};
  int lrp_layers = 7;
  bool cross_lrp = true;
  int fusion_width = 16;
  int kernel = 7;
  LayerOrder order = LayerOrder::ReluThenBn;
};

NetSpec localization_spec(const LocalizationPlan& plan = {});
NetSpec segmentation_spec(const SegmentationPlan& plan = {});
Net build_localization_net(std::uint64_t seed, const LocalizationPlan& plan = {});
Net build_segmentation_net(std::uint64_t seed, const SegmentationPlan& plan = {});

enum class CountMode { Actual, DenseEquivalent };

struct ParameterCount {
  struct Entry {
    int node;
    LayerKind kind;
    std::size_t count;
  };
  std::vector<Entry> layers;  // only nodes that own parameters
  std::size_t total = 0;
};

/// Learnable scalars per layer. DenseEquivalent counts every cross kernel as
/// if it were a full k^3 kernel.
ParameterCount count_parameters(const NetSpec& spec, CountMode mode = CountMode::Actual);
ParameterCount count_parameters(const Net& net, CountMode mode = CountMode::Actual);

struct ReceptiveField {
  std::array<int, 3> size{1, 1, 1};  // voxels per axis (x, y, z)
  std::array<int, 3> jump{1, 1, 1};  // input voxels per output step
  int node = 0;
};

/// Receptive field by the (kernel, stride) recurrence rf += (k-1)*jump,
/// jump *= stride, evaluated at the fusion head (or the output when the net
/// has no fusion stage). Where paths merge the larger field wins, so the
/// result follows the deep stream.
ReceptiveField receptive_field(const NetSpec& spec);
inline ReceptiveField receptive_field(const Net& net) { return receptive_field(net.spec()); }

/// Number of dropout nodes with the given rate.
int count_dropout_sites(const NetSpec& spec, double rate);

std::string to_string(Stream s);

}  // namespace deepbv
