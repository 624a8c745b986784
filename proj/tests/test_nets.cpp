#include "deepbv/checkpoint.hpp"
#include "deepbv/errors.hpp"
#include "deepbv/nets.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace deepbv;
using deepbv::testing::random_tensor;

namespace {

SegmentationPlan tiny_seg_plan() {
  SegmentationPlan p;
  p.input_side = 16;
  p.full_res_width = 2;
  p.encoder = {2, 3, 4, 4, 5};
  p.lrp_layers = 2;
  p.fusion_width = 2;
  return p;
}

LocalizationPlan tiny_loc_plan() {
  LocalizationPlan p;
  p.input_side = 12;
  p.widths = {2, 3, 4, 4};
  p.hidden = 8;
  return p;
}

// in -> conv -> relu -> {conv, conv} -> add -> concat(with relu) -> conv1 -> sigmoid
NetSpec branchy_spec() {
  NetSpec s;
  s.input_channels = 2;
  s.input_side = 4;
  s.add({.kind = LayerKind::Input, .inputs = {}});
  const int c0 = s.add({.kind = LayerKind::ConvDense, .inputs = {0}, .in_channels = 2, .out_channels = 3, .kernel = 3});
  const int r0 = s.add({.kind = LayerKind::ReLU, .inputs = {c0}, .in_channels = 3, .out_channels = 3});
  const int a = s.add({.kind = LayerKind::ConvDense, .inputs = {r0}, .in_channels = 3, .out_channels = 3, .kernel = 3});
  const int b = s.add({.kind = LayerKind::ConvCross, .inputs = {r0}, .in_channels = 3, .out_channels = 3, .kernel = 3});
  const int sum = s.add({.kind = LayerKind::Add, .inputs = {a, b}, .in_channels = 3, .out_channels = 3});
  const int cat = s.add({.kind = LayerKind::Concat, .inputs = {sum, r0}, .in_channels = 6, .out_channels = 6});
  const int head = s.add({.kind = LayerKind::ConvDense, .inputs = {cat}, .in_channels = 6, .out_channels = 1, .kernel = 1});
  s.output = s.add({.kind = LayerKind::Sigmoid, .inputs = {head}, .in_channels = 1, .out_channels = 1});
  return s;
}

}  // namespace

TEST(SegmentationNet, DefaultParameterCounts) {
  const NetSpec spec = segmentation_spec();
  const auto actual = count_parameters(spec, CountMode::Actual);
  const auto dense = count_parameters(spec, CountMode::DenseEquivalent);
  EXPECT_LT(actual.total, 2'000'000u);
  EXPECT_GT(dense.total, 15'000'000u);
  EXPECT_EQ(actual.total, 1'735'521u);
  EXPECT_EQ(dense.total, 22'508'385u);

  // Every cross layer differs from its dense twin by exactly 343/21 per channel pair.
  std::size_t cross_layers = 0;
  for (std::size_t i = 0; i < actual.layers.size(); ++i) {
    const auto& a = actual.layers[i];
    const auto& d = dense.layers[i];
    ASSERT_EQ(a.node, d.node);
    if (a.kind != LayerKind::ConvCross) {
      EXPECT_EQ(a.count, d.count);
      continue;
    }
    ++cross_layers;
    const auto& desc = spec.layers[std::size_t(a.node)];
    const std::size_t pairs = std::size_t(desc.in_channels) * desc.out_channels;
    const std::size_t bias = desc.bias ? std::size_t(desc.out_channels) : 0;
    EXPECT_EQ((a.count - bias) * 343, (d.count - bias) * 21);
    EXPECT_EQ(a.count - bias, 21 * pairs);
  }
  EXPECT_EQ(cross_layers, 7u);  // one per low-resolution layer
}

TEST(SegmentationNet, ReceptiveFieldCoversTheBox) {
  const auto rf = receptive_field(segmentation_spec());
  for (int a = 0; a < 3; ++a) EXPECT_GE(rf.size[std::size_t(a)], 128);
  EXPECT_EQ(rf.size[0], 694);
  EXPECT_EQ(rf.jump[0], 1);
}

TEST(ReceptiveField, RecurrenceOnPlainStack) {
  NetSpec s;
  s.input_side = 16;
  s.add({.kind = LayerKind::Input, .inputs = {}});
  int n = s.add({.kind = LayerKind::ConvDense, .inputs = {0}, .in_channels = 1, .out_channels = 1, .kernel = 3});
  n = s.add({.kind = LayerKind::ConvDense, .inputs = {n}, .in_channels = 1, .out_channels = 1, .kernel = 2, .stride = 2, .padding = Padding::Valid});
  n = s.add({.kind = LayerKind::ConvDense, .inputs = {n}, .in_channels = 1, .out_channels = 1, .kernel = 3});
  n = s.add({.kind = LayerKind::MaxPool, .inputs = {n}, .in_channels = 1, .out_channels = 1});
  s.output = s.add({.kind = LayerKind::ConvCross, .inputs = {n}, .in_channels = 1, .out_channels = 1, .kernel = 7});
  // 1 +2 (k3) +1 (k2) then jump 2: +4 (k3), pool +2 jump 4, cross +24
  const auto rf = receptive_field(s);
  EXPECT_EQ(rf.size[0], 1 + 2 + 1 + 4 + 2 + 24);
  EXPECT_EQ(rf.jump[0], 4);
}

TEST(LocalizationNet, DefaultShapeAndDropout) {
  const NetSpec spec = localization_spec();
  EXPECT_EQ(count_dropout_sites(spec, 0.15), 4);
  EXPECT_EQ(count_dropout_sites(spec, 0.4), 1);
  EXPECT_EQ(count_parameters(spec).total, 1'486'802u);
  const auto shapes = spec.node_shapes();
  EXPECT_EQ(shapes[std::size_t(spec.output)], (Shape5{1, 2, 1, 1, 1}));
}

TEST(Nets, ForwardShapesOnTinyPlans) {
  std::mt19937_64 rng(1);
  Net seg = build_segmentation_net(3, tiny_seg_plan());
  const auto y = seg.infer(random_tensor<float>(seg.input_shape(2), rng));
  EXPECT_EQ(y.shape(), (Shape5{2, 1, 16, 16, 16}));
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_GT(y[i], 0.0f);
    EXPECT_LT(y[i], 1.0f);
  }
  Net loc = build_localization_net(3, tiny_loc_plan());
  EXPECT_EQ(loc.infer(random_tensor<float>(loc.input_shape(3), rng)).shape(), (Shape5{3, 2, 1, 1, 1}));
  EXPECT_THROW(loc.infer(TensorF({1, 1, 10, 12, 12})), ShapeError);
}

TEST(Nets, SeededInitializationAndForwardAreDeterministic) {
  std::mt19937_64 rng(2);
  const auto x = random_tensor<float>({2, 1, 16, 16, 16}, rng);
  Net a = build_segmentation_net(42, tiny_seg_plan());
  Net b = build_segmentation_net(42, tiny_seg_plan());
  Net c = build_segmentation_net(43, tiny_seg_plan());
  EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
  EXPECT_NE(encode_checkpoint(a), encode_checkpoint(c));
  EXPECT_EQ(max_abs_diff(a.forward(x, Mode::Train, 5), b.forward(x, Mode::Train, 5)), 0.0f);
  EXPECT_EQ(max_abs_diff(a.infer(x), b.infer(x)), 0.0f);
}

TEST(Nets, ZeroVolumeGivesConstantOutputAtInitialization) {
  Net seg = build_segmentation_net(9, tiny_seg_plan());
  const auto y = seg.infer(TensorF(seg.input_shape(1)));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 0.5f);
}

TEST(Nets, CopyIsDeep) {
  Net a = build_localization_net(1, tiny_loc_plan());
  Net b = a;
  b.params()[0].value->setZero();
  EXPECT_NE(encode_checkpoint(a), encode_checkpoint(b));
}

TEST(NetSpec, ValidationRejectsBadWiring) {
  {
    NetSpec s = branchy_spec();
    s.layers[3].inputs = {5};  // consumes a later node
    EXPECT_THROW(s.validate(), ShapeError);
  }
  {
    NetSpec s = branchy_spec();
    s.layers[1].in_channels = 3;
    EXPECT_THROW(s.validate(), ShapeError);
  }
  {
    NetSpec s = branchy_spec();
    s.add({.kind = LayerKind::ReLU, .inputs = {2}, .in_channels = 3, .out_channels = 3});  // dangling second head
    EXPECT_THROW(s.validate(), ShapeError);
  }
  {
    NetSpec s = branchy_spec();
    s.layers[5].inputs = {3, 6};  // forward reference inside an add
    EXPECT_THROW(s.validate(), ShapeError);
  }
  {
    SegmentationPlan p = tiny_seg_plan();
    p.input_side = 24;
    EXPECT_THROW(segmentation_spec(p), ShapeError);
  }
  EXPECT_NO_THROW(branchy_spec().validate());
}

// The graph backward routes gradients through add and concat correctly.
TEST(Nets, GraphGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  Net net(branchy_spec());
  net.initialize(11);
  const auto x = random_tensor<float>(net.input_shape(2), rng);
  const auto r = random_tensor<float>({2, 1, 4, 4, 4}, rng);
  auto loss = [&] { return double(dot(net.forward(x, Mode::Train, 0), r)); };
  net.zero_grad();
  net.forward(x, Mode::Train, 0);
  net.backward(r);
  const double h = 1e-2;
  for (auto& p : net.params()) {
    double worst = 0.0, scale = 1e-6;
    for (Eigen::Index i = 0; i < p.value->size(); ++i) {
      const float keep = (*p.value)[i];
      (*p.value)[i] = keep + float(h);
      const double lp = loss();
      (*p.value)[i] = keep - float(h);
      const double lm = loss();
      (*p.value)[i] = keep;
      const double numeric = (lp - lm) / (2 * h);
      scale = std::max(scale, std::abs(numeric));
      worst = std::max(worst, std::abs(numeric - double((*p.grad)[i])));
    }
    EXPECT_LT(worst / scale, 2e-2) << p.name;
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(5);
  Net seg = build_segmentation_net(7, tiny_seg_plan());
  seg.forward(random_tensor<float>(seg.input_shape(2), rng), Mode::Train, 1);  // move running stats
  const auto bytes = encode_checkpoint(seg);
  Net back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  const auto x = random_tensor<float>(seg.input_shape(1), rng);
  EXPECT_EQ(max_abs_diff(seg.infer(x), back.infer(x)), 0.0f);
  EXPECT_EQ(count_parameters(back).total, count_parameters(seg).total);
}

TEST(Checkpoint, CorruptionRaisesFormatErrors) {
  const auto bytes = encode_checkpoint(build_localization_net(1, tiny_loc_plan()));
  auto kind_of = [](const std::vector<std::uint8_t>& b) {
    try {
      decode_checkpoint(b);
    } catch (const FormatError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "decoded a corrupt checkpoint";
    return FormatErrorKind::Io;
  };
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(kind_of(bad), FormatErrorKind::BadMagic);
  EXPECT_EQ(kind_of({bytes.begin(), bytes.begin() + 20}), FormatErrorKind::Truncated);
  EXPECT_EQ(kind_of({bytes.begin(), bytes.end() - 1}), FormatErrorKind::Truncated);
  bad = bytes;
  bad[4] = 9;
  EXPECT_EQ(kind_of(bad), FormatErrorKind::UnsupportedVersion);
  bad = bytes;
  bad.push_back(0);
  EXPECT_EQ(kind_of(bad), FormatErrorKind::Malformed);
}
