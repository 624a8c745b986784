#pragma once

#include "deepbv/volume.hpp"

#include <array>
#include <cstdint>
#include <stdexcept>

namespace deepbv {

/// Synthetic stand-in for an ultrasound scan: a speckled body (head plus
/// trunk) holding one dark, blobby cavity whose exact mask is known.
struct PhantomConfig {
  std::array<int, 3> dims_min{150, 161, 81};
  std::array<int, 3> dims_max{300, 281, 362};
  std::array<float, 3> spacing{50.0f, 50.0f, 50.0f};
  double body_fill = 0.40;        // head semi-axis as a fraction of each dim
  int bv_blobs_min = 2;
  int bv_blobs_max = 4;
  double bv_fraction_min = 0.002;  // target cavity volume / total volume
  double bv_fraction_max = 0.006;
  int bv_max_extent = 0;           // voxels per axis, 0 for no limit
  float background = 0.15f;
  float tissue = 0.55f;
  float bv = 0.08f;
  int speckle_looks = 1;           // speckle is the mean of this many unit exponentials
  double missing_boundary_prob = 0.3;
  double missing_boundary_dim = 0.25;  // intensity factor inside the dimmed cap
  double motion_prob = 0.3;
  int motion_max_shift = 3;        // voxels
  int max_retries = 50;

  /// ~96^3 volumes for desk-scale studies.
  static PhantomConfig desk();
  void validate() const;
};

struct Phantom {
  Image image;
  Mask mask;
  bool missing_boundary = false;
  bool motion = false;
};

class PhantomError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pure function of (cfg, seed).
Phantom generate_phantom(const PhantomConfig& cfg, std::uint64_t seed);

}  // namespace deepbv
