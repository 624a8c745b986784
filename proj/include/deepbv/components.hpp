#pragma once

#include "deepbv/volume.hpp"

#include <cstdint>
#include <vector>

namespace deepbv {

/// Connected-component labels: 0 is background, components are numbered
/// 1..sizes.size() in order of their first voxel in x-fastest scan order.
struct Components {
  Volume<std::int32_t> labels;
  std::vector<std::size_t> sizes;  // sizes[i] is the voxel count of label i + 1
};

/// Two-pass union-find labeling. connectivity is 6, 18 or 26.
Components label_components(const Mask& mask, int connectivity = 26);

struct ComponentCensus {
  std::size_t before = 0;          // components in the input
  std::size_t after = 0;           // components that survived
  std::size_t removed_voxels = 0;
};

/// Zeroes every component with fewer than min_voxels voxels.
Mask remove_small_components(const Mask& mask, std::size_t min_voxels, int connectivity = 26,
                             ComponentCensus* census = nullptr);

}  // namespace deepbv
