#pragma once

#include "deepbv/volume.hpp"

#include <optional>
#include <string>
#include <vector>

namespace deepbv {

/// 2|a and b| / (|a| + |b|); two empty masks score 1.
double dsc(const Mask& a, const Mask& b);

/// Fraction of mask voxels inside the box. Throws on an empty mask.
double box_containment(const BoundingBox& box, const Mask& mask);

struct VolumeMetrics {
  std::string name;
  double dsc = 0.0;
  std::optional<double> containment;
};

struct MetricsReport {
  std::vector<VolumeMetrics> volumes;
  double mean_dsc = 0.0;
  double failure_threshold = 0.6;
  std::size_t failures = 0;         // volumes with dsc below the threshold
  std::size_t boxes_full = 0;       // boxes holding the entire mask
  std::size_t boxes_95 = 0;         // boxes holding at least 95% of it
  bool has_boxes = false;

  /// One record per volume followed by a summary record.
  std::string to_json_lines() const;
  static MetricsReport from_json_lines(const std::string& text);
};

MetricsReport evaluate(const std::vector<Mask>& predictions, const std::vector<Mask>& ground_truths,
                       const std::vector<BoundingBox>* boxes = nullptr, const std::vector<std::string>* names = nullptr);

/// Writes an 8-bit binary PGM of one slice, min-max scaled; axis 0/1/2 cuts
/// at x/y/z = index. With a mask, a second PGM named <stem>_mask<ext> holds
/// the mask slice. Returns the written paths.
std::vector<std::string> export_slice(const Image& volume, const Mask* mask, int axis, int index,
                                      const std::string& path);

}  // namespace deepbv
