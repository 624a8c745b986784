#include "deepbv/training.hpp"

#include "deepbv/pipeline.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <random>

namespace deepbv {

void SgdConfig::validate() const {
  if (!(learning_rate > 0 && momentum >= 0 && momentum < 1 && weight_decay >= 0))
    throw std::invalid_argument("sgd: learning rate must be positive, momentum in [0, 1), weight decay >= 0");
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("sgd: epochs and batch size must be positive");
  if (!(decay_factor > 0 && decay_factor < 1)) throw std::invalid_argument("sgd: decay factor must lie in (0, 1)");
}

double lr_at_epoch(int epoch, const SgdConfig& cfg) {
  if (epoch < 1 || epoch > cfg.epochs)
    throw std::out_of_range("lr_at_epoch: epoch " + std::to_string(epoch) + " outside 1.." + std::to_string(cfg.epochs));
  return epoch > cfg.decay_after_epoch ? cfg.learning_rate * cfg.decay_factor : cfg.learning_rate;
}

// ---------------------------------------------------------------------------

MaskIntegral::MaskIntegral(const Mask& m) : dims_(m.dims) {
  const std::size_t X = std::size_t(dims_[0]) + 1, Y = std::size_t(dims_[1]) + 1, Z = std::size_t(dims_[2]) + 1;
  s_.assign(X * Y * Z, 0);
  auto at = [&](std::size_t x, std::size_t y, std::size_t z) -> std::uint32_t& { return s_[(z * Y + y) * X + x]; };
  for (std::size_t z = 1; z < Z; ++z)
    for (std::size_t y = 1; y < Y; ++y)
      for (std::size_t x = 1; x < X; ++x) {
        const std::uint32_t v = m.at(int(x - 1), int(y - 1), int(z - 1)) ? 1 : 0;
        at(x, y, z) = v + at(x - 1, y, z) + at(x, y - 1, z) + at(x, y, z - 1) - at(x - 1, y - 1, z) -
                      at(x - 1, y, z - 1) - at(x, y - 1, z - 1) + at(x - 1, y - 1, z - 1);
      }
  total_ = at(X - 1, Y - 1, Z - 1);
}

std::size_t MaskIntegral::count(const std::array<int, 3>& lo, const std::array<int, 3>& side) const {
  const std::size_t X = std::size_t(dims_[0]) + 1, Y = std::size_t(dims_[1]) + 1;
  std::array<std::size_t, 3> a{}, b{};
  for (std::size_t i = 0; i < 3; ++i) {
    a[i] = std::size_t(std::clamp(lo[i], 0, dims_[i]));
    b[i] = std::size_t(std::clamp(lo[i] + side[i], 0, dims_[i]));
  }
  auto at = [&](std::size_t x, std::size_t y, std::size_t z) { return std::int64_t(s_[(z * Y + y) * X + x]); };
  const std::int64_t v = at(b[0], b[1], b[2]) - at(a[0], b[1], b[2]) - at(b[0], a[1], b[2]) - at(b[0], b[1], a[2]) +
                         at(a[0], a[1], b[2]) + at(a[0], b[1], a[2]) + at(b[0], a[1], a[2]) - at(a[0], a[1], a[2]);
  return std::size_t(v);
}

WindowClass classify_fraction(double fraction, const LocalizationLabeling& rule) {
  if (fraction > rule.positive_above) return WindowClass::Positive;
  if (fraction < rule.negative_below) return WindowClass::Negative;
  return WindowClass::Ambiguous;
}

namespace {

std::vector<int> grid(int dim, int window, int stride) {
  std::vector<int> out;
  for (int a = 0; a + window <= dim; a += stride) out.push_back(a);
  return out;
}

}  // namespace

std::vector<WindowLabel> extract_localization_examples(const Mask& mask_ds, const LocalizationLabeling& rule) {
  for (int d : mask_ds.dims)
    if (d < rule.window) throw ShapeError("extract_localization_examples: pad the volume to the window first");
  const MaskIntegral integral(mask_ds);
  if (integral.total() == 0) throw std::invalid_argument("extract_localization_examples: mask is empty");
  const double total = double(integral.total());
  const std::array<int, 3> side{rule.window, rule.window, rule.window};
  std::vector<WindowLabel> out;
  auto scan = [&](int stride, WindowClass keep) {
    const auto xs = grid(mask_ds.dims[0], rule.window, stride);
    const auto ys = grid(mask_ds.dims[1], rule.window, stride);
    const auto zs = grid(mask_ds.dims[2], rule.window, stride);
    for (int z : zs)
      for (int y : ys)
        for (int x : xs) {
          const double f = double(integral.count({x, y, z}, side)) / total;
          if (classify_fraction(f, rule) == keep) out.push_back({{x, y, z}, keep, f});
        }
  };
  scan(rule.stride_pos, WindowClass::Positive);
  scan(rule.stride_neg, WindowClass::Negative);
  return out;
}

std::vector<std::array<int, 3>> extract_segmentation_subvolumes(const Mask& mask, int side, double min_fraction) {
  for (int d : mask.dims)
    if (d < side) throw ShapeError("extract_segmentation_subvolumes: pad the volume to the side first");
  const MaskIntegral integral(mask);
  if (integral.total() == 0) throw std::invalid_argument("extract_segmentation_subvolumes: mask is empty");
  const double total = double(integral.total());
  std::vector<std::array<int, 3>> out;
  for (int z = 0; z + side <= mask.dims[2]; ++z)
    for (int y = 0; y + side <= mask.dims[1]; ++y)
      for (int x = 0; x + side <= mask.dims[0]; ++x)
        if (double(integral.count({x, y, z}, {side, side, side})) / total >= min_fraction) out.push_back({x, y, z});
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// A half-resolution voxel belongs to the cavity when any of its 2^3 block does.
Mask downsample_mask(const Mask& m) {
  const std::array<int, 3> od{(m.dims[0] + 1) / 2, (m.dims[1] + 1) / 2, (m.dims[2] + 1) / 2};
  Mask out(od, 0);
  for (int z = 0; z < m.dims[2]; ++z)
    for (int y = 0; y < m.dims[1]; ++y)
      for (int x = 0; x < m.dims[0]; ++x)
        if (m.at(x, y, z)) out.at(x / 2, y / 2, z / 2) = 1;
  return out;
}

void check_pairs(const std::vector<Image>& images, const std::vector<Mask>& masks) {
  if (images.size() != masks.size()) throw std::invalid_argument("training set: image and mask counts differ");
  for (std::size_t i = 0; i < images.size(); ++i)
    if (images[i].dims != masks[i].dims) throw ShapeError("training set: image and mask differ in shape");
}

}  // namespace

LocalizationSet build_localization_set(const std::vector<Image>& images, const std::vector<Mask>& masks,
                                       const LocalizationLabeling& rule, std::size_t max_examples,
                                       std::uint64_t seed) {
  check_pairs(images, masks);
  LocalizationSet set;
  set.window = rule.window;
  std::vector<LocalizationSample> pos, neg;
  for (std::size_t i = 0; i < images.size(); ++i) {
    set.volumes.push_back(pad_to_min(downsample2(images[i]), rule.window).volume);
    const Mask mds = pad_to_min(downsample_mask(masks[i]), rule.window);
    for (const auto& w : extract_localization_examples(mds, rule)) {
      (w.label == WindowClass::Positive ? pos : neg).push_back({int(i), w.anchor, w.label == WindowClass::Positive});
    }
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::size_t n = std::min(pos.size(), neg.size());
  if (max_examples > 0) n = std::min(n, max_examples / 2);
  set.samples.insert(set.samples.end(), pos.begin(), pos.begin() + std::ptrdiff_t(n));
  set.samples.insert(set.samples.end(), neg.begin(), neg.begin() + std::ptrdiff_t(n));
  return set;
}

SegmentationSet build_segmentation_set(const std::vector<Image>& images, const std::vector<Mask>& masks, int side,
                                       double min_fraction) {
  check_pairs(images, masks);
  SegmentationSet set;
  set.side = side;
  for (std::size_t i = 0; i < images.size(); ++i) {
    set.images.push_back(pad_to_min(images[i], side).volume);
    set.masks.push_back(pad_to_min(masks[i], side));
    for (const auto& a : extract_segmentation_subvolumes(set.masks.back(), side, min_fraction))
      set.samples.push_back({int(i), a});
  }
  return set;
}

// ---------------------------------------------------------------------------

void log_step(std::ostream& out, int epoch, int step, double lr, double loss) {
  out << "epoch=" << epoch << " step=" << step << " lr=" << lr << " loss=" << std::setprecision(9) << loss
      << std::setprecision(6) << '\n';
}

namespace {

template <typename T>
void load_cube(const Volume<T>& v, const std::array<int, 3>& anchor, int side, const AxisMap* map, float* out,
               std::vector<float>& scratch) {
  if (!map) {
    crop_cube(v, anchor, side, out);
    return;
  }
  scratch.resize(std::size_t(side) * side * side);
  crop_cube(v, anchor, side, scratch.data());
  apply_axis_map(*map, scratch.data(), {side, side, side}, out);
}

void check_loss(double loss) {
  if (!std::isfinite(loss)) throw NonFiniteError("training loss is not finite");
}

}  // namespace

void train_localization(Net& net, const LocalizationSet& set, const TrainOptions& opt, std::uint64_t seed) {
  opt.sgd.validate();
  if (set.samples.empty()) throw std::invalid_argument("train_localization: no examples");
  const int w = set.window;
  if (net.spec().input_side != w) throw ShapeError("train_localization: net input side differs from the window");
  std::mt19937_64 rng(seed);
  OptimizerState<float> state;
  const auto params = net.params();
  std::vector<std::size_t> order(set.samples.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t cube = std::size_t(w) * w * w;
  std::vector<float> scratch;
  int step = 0;
  for (int epoch = 1; epoch <= opt.sgd.epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, opt.sgd);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t first = 0; first < order.size(); first += std::size_t(opt.sgd.batch_size)) {
      const int n = int(std::min(order.size() - first, std::size_t(opt.sgd.batch_size)));
      TensorF x(Shape5{n, 1, w, w, w});
      std::vector<int> labels(static_cast<std::size_t>(n));
      for (int b = 0; b < n; ++b) {
        const auto& s = set.samples[order[first + std::size_t(b)]];
        labels[std::size_t(b)] = s.positive ? 1 : 0;
        AxisMap map;
        if (opt.augment) map = sample_augmentation(rng, {w, w, w}).map();
        load_cube(set.volumes[std::size_t(s.volume)], s.anchor, w, opt.augment ? &map : nullptr, x.data() + b * cube,
                  scratch);
      }
      net.zero_grad();
      const TensorF logits = net.forward(x, Mode::Train, rng());
      const auto loss = weighted_cross_entropy(logits, labels);
      check_loss(loss.loss);
      net.backward(loss.grad);
      sgd_step(params, opt.sgd, state, lr);
      ++step;
      if (opt.log) log_step(*opt.log, epoch, step, lr, loss.loss);
    }
  }
}

Net train_localization(const LocalizationSet& set, const TrainOptions& opt, std::uint64_t seed,
                       const LocalizationPlan& plan) {
  Net net = build_localization_net(seed, plan);
  train_localization(net, set, opt, seed ^ 0x6C6F63ull);
  return net;
}

void train_segmentation(Net& net, const SegmentationSet& set, const TrainOptions& opt, std::uint64_t seed) {
  opt.sgd.validate();
  if (set.samples.empty()) throw std::invalid_argument("train_segmentation: empty subvolume pool");
  const int s = set.side;
  if (net.spec().input_side != s) throw ShapeError("train_segmentation: net input side differs from the subvolume side");
  std::mt19937_64 rng(seed);
  OptimizerState<float> state;
  const auto params = net.params();
  std::vector<std::size_t> pool(set.samples.size());
  std::iota(pool.begin(), pool.end(), 0);
  const std::size_t per_epoch =
      opt.per_epoch_sample == 0 ? pool.size() : std::min(pool.size(), opt.per_epoch_sample);
  const std::size_t cube = std::size_t(s) * s * s;
  std::vector<float> scratch;
  int step = 0;
  for (int epoch = 1; epoch <= opt.sgd.epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, opt.sgd);
    // Partial Fisher-Yates: the first per_epoch entries are a uniform draw
    // without replacement.
    for (std::size_t i = 0; i < per_epoch; ++i) {
      const std::size_t j = i + std::size_t(rng() % (pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    for (std::size_t first = 0; first < per_epoch; first += std::size_t(opt.sgd.batch_size)) {
      const int n = int(std::min(per_epoch - first, std::size_t(opt.sgd.batch_size)));
      TensorF x(Shape5{n, 1, s, s, s}), y(Shape5{n, 1, s, s, s});
      for (int b = 0; b < n; ++b) {
        const auto& smp = set.samples[pool[first + std::size_t(b)]];
        AxisMap map;
        if (opt.augment) map = sample_augmentation(rng, {s, s, s}).map();
        const AxisMap* m = opt.augment ? &map : nullptr;
        load_cube(set.images[std::size_t(smp.volume)], smp.anchor, s, m, x.data() + b * cube, scratch);
        load_cube(set.masks[std::size_t(smp.volume)], smp.anchor, s, m, y.data() + b * cube, scratch);
      }
      net.zero_grad();
      const TensorF probs = net.forward(x, Mode::Train, rng());
      const auto loss = dice_loss(probs, y);
      check_loss(loss.loss);
      net.backward(loss.grad);
      sgd_step(params, opt.sgd, state, lr);
      ++step;
      if (opt.log) log_step(*opt.log, epoch, step, lr, loss.loss);
    }
  }
}

Net train_segmentation(const SegmentationSet& set, const TrainOptions& opt, std::uint64_t seed,
                       const SegmentationPlan& plan) {
  Net net = build_segmentation_net(seed, plan);
  train_segmentation(net, set, opt, seed ^ 0x736567ull);
  return net;
}

}  // namespace deepbv
