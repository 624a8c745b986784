#pragma once

#include "deepbv/volume.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace deepbv {

/// Signed axis permutation: output axis a reads input axis perm[a],
/// reversed when rev[a] is set. Every lattice rotation and flip is one.
struct AxisMap {
  std::array<int, 3> perm{0, 1, 2};
  std::array<bool, 3> rev{false, false, false};

  /// This map applied after `first`.
  AxisMap after(const AxisMap& first) const {
    AxisMap c;
    for (std::size_t a = 0; a < 3; ++a) {
      const auto b = std::size_t(perm[a]);
      c.perm[a] = first.perm[b];
      c.rev[a] = rev[a] != first.rev[b];
    }
    return c;
  }
  AxisMap inverse() const {
    AxisMap inv;
    for (std::size_t a = 0; a < 3; ++a) {
      inv.perm[std::size_t(perm[a])] = int(a);
      inv.rev[std::size_t(perm[a])] = rev[a];
    }
    return inv;
  }
  std::array<int, 3> output_dims(const std::array<int, 3>& in) const {
    return {in[std::size_t(perm[0])], in[std::size_t(perm[1])], in[std::size_t(perm[2])]};
  }
  bool operator==(const AxisMap&) const = default;
};

/// A quarter-turn rotation choice plus independent flips. rotation 0 is the
/// identity; 1 + 3*axis + (q - 1) turns q quarter turns about axis (x, y, z).
struct AugmentationOp {
  int rotation = 0;
  std::array<bool, 3> flip{false, false, false};

  static constexpr int kRotations = 10;
  static AugmentationOp rotate(int axis, int quarter_turns) { return {1 + 3 * axis + (quarter_turns - 1), {}}; }

  AxisMap map() const;
  /// Rotations swap two axes, so they need those two dims equal.
  bool valid_for(const std::array<int, 3>& dims) const;
};

/// out(o) = in(i) with i given by the map; dims follow map.output_dims.
template <typename T>
void apply_axis_map(const AxisMap& m, const T* in, const std::array<int, 3>& in_dims, T* out) {
  const auto od = m.output_dims(in_dims);
  const std::array<std::size_t, 3> stride{1, std::size_t(in_dims[0]), std::size_t(in_dims[0]) * in_dims[1]};
  std::array<std::ptrdiff_t, 3> step{}, base{};
  for (std::size_t a = 0; a < 3; ++a) {
    const auto s = std::ptrdiff_t(stride[std::size_t(m.perm[a])]);
    step[a] = m.rev[a] ? -s : s;
    base[a] = m.rev[a] ? s * (od[a] - 1) : 0;
  }
  std::size_t o = 0;
  for (int z = 0; z < od[2]; ++z)
    for (int y = 0; y < od[1]; ++y) {
      const T* row = in + base[0] + base[1] + base[2] + step[1] * y + step[2] * z;
      for (int x = 0; x < od[0]; ++x) out[o++] = row[step[0] * x];
    }
}

template <typename T>
Volume<T> apply_axis_map(const AxisMap& m, const Volume<T>& v) {
  Volume<T> out(m.output_dims(v.dims));
  for (std::size_t a = 0; a < 3; ++a) out.spacing[a] = v.spacing[std::size_t(m.perm[a])];
  apply_axis_map(m, v.data.data(), v.dims, out.data.data());
  return out;
}

template <typename T>
Volume<T> augment(const Volume<T>& v, const AugmentationOp& op) {
  if (!op.valid_for(v.dims)) throw std::invalid_argument("augmentation rotation needs equal dims on the turned axes");
  return apply_axis_map(op.map(), v);
}

/// Uniform over the rotations valid for dims, then a fair coin per axis flip.
AugmentationOp sample_augmentation(std::mt19937_64& rng, const std::array<int, 3>& dims);

}  // namespace deepbv
