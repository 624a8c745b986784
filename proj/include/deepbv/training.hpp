#pragma once

#include "deepbv/augment.hpp"
#include "deepbv/nets.hpp"
#include "deepbv/volume.hpp"

#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepbv {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename Scalar>
struct LossResult {
  Scalar loss = 0;
  Tensor<Scalar> grad;  // d loss / d input, same shape as the input
};

/// Class-weighted softmax cross entropy over (N, 2, 1, 1, 1) logits, averaged
/// over the batch. labels[n] is 1 for a window containing the cavity.
template <typename Scalar>
LossResult<Scalar> weighted_cross_entropy(const Tensor<Scalar>& logits, const std::vector<int>& labels,
                                          Scalar w_pos = Scalar(1.2), Scalar w_neg = Scalar(1.0)) {
  const Shape5& s = logits.shape();
  if (s.per_sample() != 2) throw ShapeError("weighted_cross_entropy: expected 2 logits per example, got " + s.str());
  if (labels.size() != std::size_t(s.n)) throw ShapeError("weighted_cross_entropy: label count differs from batch");
  LossResult<Scalar> r;
  r.grad = Tensor<Scalar>(s);
  const Scalar inv_n = Scalar(1) / Scalar(s.n);
  for (int n = 0; n < s.n; ++n) {
    const Scalar* z = logits.sample(n);
    const Scalar m = std::max(z[0], z[1]);
    const Scalar e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
    const Scalar p[2] = {e0 / (e0 + e1), e1 / (e0 + e1)};
    const int y = labels[std::size_t(n)];
    if (y != 0 && y != 1) throw std::invalid_argument("weighted_cross_entropy: labels must be 0 or 1");
    const Scalar w = y ? w_pos : w_neg;
    r.loss += -w * std::log(std::max(p[y], Scalar(1e-12))) * inv_n;
    // d(-log p_y)/dz_k = p_k - [k == y]; zero where the clamp is active.
    const bool clamped = p[y] < Scalar(1e-12);
    for (int k = 0; k < 2; ++k) r.grad.sample(n)[k] = clamped ? Scalar(0) : w * (p[k] - Scalar(k == y)) * inv_n;
  }
  return r;
}

/// Soft Dice loss 1 - (2<p,m> + eps) / (sum p + sum m + eps) per sample,
/// averaged over the batch.
template <typename Scalar>
LossResult<Scalar> dice_loss(const Tensor<Scalar>& probs, const Tensor<Scalar>& mask, Scalar eps = Scalar(1e-4)) {
  if (!(probs.shape() == mask.shape())) throw ShapeError("dice_loss: " + probs.shape().str() + " vs " + mask.shape().str());
  const Shape5& s = probs.shape();
  LossResult<Scalar> r;
  r.grad = Tensor<Scalar>(s);
  const std::size_t len = s.per_sample();
  for (int n = 0; n < s.n; ++n) {
    const Scalar* p = probs.sample(n);
    const Scalar* m = mask.sample(n);
    double inter = 0, sp = 0, sm = 0;
    for (std::size_t i = 0; i < len; ++i) {
      inter += double(p[i]) * m[i];
      sp += p[i];
      sm += m[i];
    }
    const double num = 2 * inter + double(eps);
    const double den = sp + sm + double(eps);
    r.loss += Scalar((1.0 - num / den) / s.n);
    Scalar* g = r.grad.sample(n);
    const double scale = 1.0 / (den * den * s.n);
    for (std::size_t i = 0; i < len; ++i) g[i] = Scalar(-(2.0 * m[i] * den - num) * scale);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  int epochs = 5;
  double decay_factor = 0.1;
  int decay_after_epoch = 3;  // epochs after this one use the decayed rate
  int batch_size = 200;

  void validate() const;
};

/// 1-based epoch.
double lr_at_epoch(int epoch, const SgdConfig& cfg);

template <typename Scalar>
struct OptimizerState {
  std::vector<Vector<Scalar>> velocity;  // one per parameter tensor
};

/// v <- mu v + (g + wd p); p <- p - lr v. Throws NonFiniteError without
/// touching anything when a gradient is not finite.
template <typename Scalar>
void sgd_step(const std::vector<ParamRef<Scalar>>& params, const SgdConfig& cfg, OptimizerState<Scalar>& state,
              double lr) {
  for (const auto& p : params)
    if (!p.grad->allFinite()) throw NonFiniteError("sgd_step: non-finite gradient in " + p.name);
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.push_back(Vector<Scalar>::Zero(p.value->size()));
  }
  if (state.velocity.size() != params.size()) throw ShapeError("sgd_step: optimizer state does not match parameters");
  const Scalar mu = Scalar(cfg.momentum), wd = Scalar(cfg.weight_decay), rate = Scalar(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Vector<Scalar>& v = state.velocity[i];
    if (v.size() != params[i].value->size()) throw ShapeError("sgd_step: velocity shape mismatch for " + params[i].name);
    v = mu * v + (*params[i].grad + wd * *params[i].value);
    *params[i].value -= rate * v;
  }
}

// ---------------------------------------------------------------------------
// Example extraction
// ---------------------------------------------------------------------------

enum class WindowClass { Positive, Negative, Ambiguous };

struct WindowLabel {
  std::array<int, 3> anchor{0, 0, 0};
  WindowClass label = WindowClass::Ambiguous;
  double fraction = 0.0;  // cavity voxels inside / cavity voxels total
};

/// Inclusive-exclusive 3D prefix sums of a mask, for O(1) box counts.
class MaskIntegral {
 public:
  explicit MaskIntegral(const Mask& m);
  std::size_t total() const { return total_; }
  std::size_t count(const std::array<int, 3>& lo, const std::array<int, 3>& side) const;

 private:
  std::array<int, 3> dims_;
  std::vector<std::uint32_t> s_;
  std::size_t total_ = 0;
};

struct LocalizationLabeling {
  int window = 64;
  int stride_pos = 2;
  int stride_neg = 3;
  double positive_above = 0.99;
  double negative_below = 0.80;
};

/// Classifies a contained fraction with the strict thresholds.
WindowClass classify_fraction(double fraction, const LocalizationLabeling& rule);

/// Positives from the stride_pos scan plus negatives from the stride_neg scan
/// (anchors 0, s, 2s, ... with the window inside the mask volume).
std::vector<WindowLabel> extract_localization_examples(const Mask& mask_ds, const LocalizationLabeling& rule = {});

/// Every stride-1 anchor whose cube holds at least min_fraction of the mask.
std::vector<std::array<int, 3>> extract_segmentation_subvolumes(const Mask& mask, int side = 128,
                                                                double min_fraction = 0.97);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct LocalizationSample {
  int volume = 0;
  std::array<int, 3> anchor{0, 0, 0};
  bool positive = false;
};

/// Half-resolution volumes (zero padded to the window) and balanced windows.
struct LocalizationSet {
  std::vector<Image> volumes;
  std::vector<LocalizationSample> samples;
  int window = 64;
};

struct SegmentationSample {
  int volume = 0;
  std::array<int, 3> anchor{0, 0, 0};
};

struct SegmentationSet {
  std::vector<Image> images;  // zero padded to the side
  std::vector<Mask> masks;
  std::vector<SegmentationSample> samples;
  int side = 128;
};

/// Downsamples and pads each volume, labels windows, and balances the classes
/// by undersampling the larger one. max_examples > 0 caps the balanced total.
LocalizationSet build_localization_set(const std::vector<Image>& images, const std::vector<Mask>& masks,
                                       const LocalizationLabeling& rule, std::size_t max_examples,
                                       std::uint64_t seed);

SegmentationSet build_segmentation_set(const std::vector<Image>& images, const std::vector<Mask>& masks, int side,
                                       double min_fraction);

struct TrainOptions {
  SgdConfig sgd;
  bool augment = true;
  std::size_t per_epoch_sample = 0;  // segmentation only; 0 takes the whole pool
  std::ostream* log = nullptr;       // "epoch=E step=S lr=LR loss=L" per step
};

/// Writes one metrics-log line.
void log_step(std::ostream& out, int epoch, int step, double lr, double loss);

Net train_localization(const LocalizationSet& set, const TrainOptions& opt, std::uint64_t seed,
                       const LocalizationPlan& plan);

/// Trains starting from `net` in place.
void train_localization(Net& net, const LocalizationSet& set, const TrainOptions& opt, std::uint64_t seed);

Net train_segmentation(const SegmentationSet& set, const TrainOptions& opt, std::uint64_t seed,
                       const SegmentationPlan& plan);

void train_segmentation(Net& net, const SegmentationSet& set, const TrainOptions& opt, std::uint64_t seed);

}  // namespace deepbv
