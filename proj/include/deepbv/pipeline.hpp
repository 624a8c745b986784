#pragma once

#include "deepbv/components.hpp"
#include "deepbv/nets.hpp"
#include "deepbv/volume.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace deepbv {

/// Mean of each 2^3 block; trailing odd blocks average what is there.
Image downsample2(const Image& v);

struct PaddedImage {
  Image volume;
  std::array<int, 3> original{0, 0, 0};  // dims before padding
  std::array<int, 3> pad_high{0, 0, 0};  // zero slabs appended per axis
};

/// Appends zero slabs on the high side of every axis shorter than min_side.
PaddedImage pad_to_min(const Image& v, int min_side);
Mask pad_to_min(const Mask& m, int min_side);

/// Anchors 0, s, 2s, ... plus a flush anchor at dim - window when the grid
/// misses it. Requires dim >= window.
std::vector<int> enumerate_windows(int dim, int window, int stride);

struct PipelineConfig {
  int box_side = 128;          // full resolution; the half-resolution window is box_side / 2
  int scan_stride = 3;
  double loc_threshold = 0.95;
  double seg_threshold = 0.92;
  std::size_t min_component = 300;
  int connectivity = 26;
  int window_batch = 32;       // windows per classifier call

  int window() const { return box_side / 2; }
};

struct WindowScore {
  std::array<int, 3> anchor{0, 0, 0};  // half-resolution
  double probability = 0.0;
};

struct LocalizationResult {
  BoundingBox box;                       // full resolution, inside the padded volume
  std::array<int, 3> center{0, 0, 0};    // full resolution
  std::vector<WindowScore> positives;
  std::size_t windows_scanned = 0;
  int ensemble_size = 0;
  bool fallback = false;                 // no window beat the threshold
};

/// Scans the half-resolution volume, averages the classifiers' positive-class
/// probabilities per window, and centers a box on the mean positive center.
/// `volume` must already be padded to at least cfg.box_side per axis.
LocalizationResult localize(const Image& volume, const std::vector<const Net*>& classifiers, const PipelineConfig& cfg);

/// Positive-class probability of each window; windows share one ensemble mean.
std::vector<double> score_windows(const Image& volume_ds, const std::vector<std::array<int, 3>>& anchors, int window,
                                  const std::vector<const Net*>& classifiers, int batch);

struct SegmentationResult {
  Mask mask;                          // full volume shape
  std::vector<Image> probabilities;   // one box-sized map per network
  ComponentCensus census;
  BoundingBox box;
};

/// Thresholds each network's map on the box and ORs them into a full-size mask.
SegmentationResult segment_box(const Image& volume, const BoundingBox& box, const std::vector<const Net*>& nets,
                               double threshold);

struct EndToEndResult {
  LocalizationResult localization;
  SegmentationResult segmentation;  // mask in original (unpadded) coordinates
};

EndToEndResult segment_end_to_end(const Image& volume, const std::vector<const Net*>& loc_nets,
                                  const std::vector<const Net*>& seg_nets, const PipelineConfig& cfg);

/// One JSON object (single line) describing an inference result.
std::string inference_record(const std::string& name, const EndToEndResult& r, const std::optional<double>& dsc);

}  // namespace deepbv
