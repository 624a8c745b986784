#pragma once

#include "deepbv/errors.hpp"
#include "deepbv/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace deepbv {

/// Dense 3D grid, x fastest. dims are (x, y, z); spacing in micrometers.
template <typename T>
struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  std::array<float, 3> spacing{50.0f, 50.0f, 50.0f};
  std::vector<T> data;

  Volume() = default;
  Volume(std::array<int, 3> d, T value = T(0)) : dims(d), data(std::size_t(d[0]) * d[1] * d[2], value) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(int x, int y, int z) const { return (std::size_t(z) * dims[1] + y) * dims[0] + x; }
  T& at(int x, int y, int z) { return data[index(x, y, z)]; }
  const T& at(int x, int y, int z) const { return data[index(x, y, z)]; }
  bool same_shape(const Volume& o) const { return dims == o.dims; }
};

using Image = Volume<float>;
using Mask = Volume<std::uint8_t>;

/// Cube of side `side` whose lowest corner is `anchor` (x, y, z).
struct BoundingBox {
  std::array<int, 3> anchor{0, 0, 0};
  int side = 0;

  bool contains(int x, int y, int z) const {
    return x >= anchor[0] && x < anchor[0] + side && y >= anchor[1] && y < anchor[1] + side && z >= anchor[2] &&
           z < anchor[2] + side;
  }
  bool operator==(const BoundingBox&) const = default;
};

std::size_t count_nonzero(const Mask& m);

/// Copies the cube at `anchor` into a (1, 1, side, side, side) tensor layout.
/// Voxels outside the volume read as zero.
template <typename T, typename S>
void crop_cube(const Volume<T>& v, const std::array<int, 3>& anchor, int side, S* out) {
  for (int z = 0; z < side; ++z)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const int vx = anchor[0] + x, vy = anchor[1] + y, vz = anchor[2] + z;
        const bool inside = vx >= 0 && vy >= 0 && vz >= 0 && vx < v.dims[0] && vy < v.dims[1] && vz < v.dims[2];
        *out++ = inside ? S(v.at(vx, vy, vz)) : S(0);
      }
}

template <typename T>
Volume<T> crop(const Volume<T>& v, const std::array<int, 3>& anchor, const std::array<int, 3>& dims) {
  Volume<T> out(dims);
  out.spacing = v.spacing;
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) out.at(x, y, z) = v.at(anchor[0] + x, anchor[1] + y, anchor[2] + z);
  return out;
}

// ---------------------------------------------------------------------------
// DBV1 container: "DBV1", dims 3 x u32, spacing 3 x f32, dtype u8, payload.
// ---------------------------------------------------------------------------

enum class Dtype : std::uint8_t { Float32 = 0, Mask8 = 1 };

struct VolumeHeader {
  std::array<std::uint32_t, 3> dims{0, 0, 0};
  std::array<float, 3> spacing{50.0f, 50.0f, 50.0f};
  Dtype dtype = Dtype::Float32;
};

inline constexpr std::size_t kVolumeHeaderBytes = 4 + 12 + 12 + 1;

std::vector<std::uint8_t> encode_header(const VolumeHeader& h);
VolumeHeader decode_header(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> encode_volume(const Image& v);
std::vector<std::uint8_t> encode_volume(const Mask& m);
std::variant<Image, Mask> decode_volume(const std::vector<std::uint8_t>& bytes);

void write_volume(const Image& v, const std::string& path);
void write_volume(const Mask& m, const std::string& path);
std::variant<Image, Mask> read_volume(const std::string& path);
/// Float volumes as stored; masks are widened to 0/1 floats.
Image read_image(const std::string& path);
/// Requires a mask file (dtype 1).
Mask read_mask(const std::string& path);

}  // namespace deepbv
