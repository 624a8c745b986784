#include "deepbv/volume.hpp"

#include "deepbv/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace deepbv {

std::size_t count_nonzero(const Mask& m) {
  return std::size_t(std::count_if(m.data.begin(), m.data.end(), [](std::uint8_t v) { return v != 0; }));
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

VolumeHeader header_of(const std::array<int, 3>& dims, const std::array<float, 3>& spacing, Dtype dtype) {
  VolumeHeader h;
  for (int a = 0; a < 3; ++a) {
    if (dims[std::size_t(a)] <= 0) throw FormatError(FormatErrorKind::Malformed, "volume dims must be positive");
    h.dims[std::size_t(a)] = std::uint32_t(dims[std::size_t(a)]);
  }
  h.spacing = spacing;
  h.dtype = dtype;
  return h;
}

std::size_t voxel_count(const VolumeHeader& h) { return std::size_t(h.dims[0]) * h.dims[1] * h.dims[2]; }

}  // namespace

std::vector<std::uint8_t> encode_header(const VolumeHeader& h) {
  std::vector<std::uint8_t> out{'D', 'B', 'V', '1'};
  for (auto d : h.dims) put_u32(out, d);
  for (auto s : h.spacing) put_u32(out, std::bit_cast<std::uint32_t>(s));
  out.push_back(std::uint8_t(h.dtype));
  return out;
}

VolumeHeader decode_header(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), "DBV1", 4) != 0)
    throw FormatError(FormatErrorKind::BadMagic, "not a DBV1 volume");
  if (bytes.size() < kVolumeHeaderBytes)
    throw FormatError(FormatErrorKind::Truncated, "header needs " + std::to_string(kVolumeHeaderBytes) + " bytes");
  VolumeHeader h;
  for (std::size_t a = 0; a < 3; ++a) h.dims[a] = get_u32(bytes.data() + 4 + 4 * a);
  for (std::size_t a = 0; a < 3; ++a) h.spacing[a] = std::bit_cast<float>(get_u32(bytes.data() + 16 + 4 * a));
  const std::uint8_t dtype = bytes[28];
  if (dtype > 1) throw FormatError(FormatErrorKind::UnknownDtype, "dtype code " + std::to_string(dtype));
  h.dtype = Dtype(dtype);
  if (h.dims[0] == 0 || h.dims[1] == 0 || h.dims[2] == 0) throw FormatError(FormatErrorKind::Malformed, "zero dimension");
  return h;
}

std::vector<std::uint8_t> encode_volume(const Image& v) {
  if (v.size() != std::size_t(v.dims[0]) * v.dims[1] * v.dims[2])
    throw FormatError(FormatErrorKind::Malformed, "payload does not match dims");
  for (float x : v.data)
    if (!std::isfinite(x)) throw FormatError(FormatErrorKind::NonFinite, "volume contains NaN or infinity");
  std::vector<std::uint8_t> out = encode_header(header_of(v.dims, v.spacing, Dtype::Float32));
  out.reserve(out.size() + 4 * v.size());
  for (float x : v.data) put_u32(out, std::bit_cast<std::uint32_t>(x));
  return out;
}

std::vector<std::uint8_t> encode_volume(const Mask& m) {
  if (m.size() != std::size_t(m.dims[0]) * m.dims[1] * m.dims[2])
    throw FormatError(FormatErrorKind::Malformed, "payload does not match dims");
  std::vector<std::uint8_t> out = encode_header(header_of(m.dims, m.spacing, Dtype::Mask8));
  for (std::uint8_t x : m.data) out.push_back(x ? 1 : 0);
  return out;
}

std::variant<Image, Mask> decode_volume(const std::vector<std::uint8_t>& bytes) {
  const VolumeHeader h = decode_header(bytes);
  const std::size_t n = voxel_count(h);
  const std::size_t payload = n * (h.dtype == Dtype::Float32 ? 4 : 1);
  const std::size_t have = bytes.size() - kVolumeHeaderBytes;
  if (have < payload)
    throw FormatError(FormatErrorKind::Truncated,
                      "payload has " + std::to_string(have) + " of " + std::to_string(payload) + " bytes");
  if (have > payload) throw FormatError(FormatErrorKind::Malformed, "trailing bytes after payload");
  const std::array<int, 3> dims{int(h.dims[0]), int(h.dims[1]), int(h.dims[2])};
  const std::uint8_t* p = bytes.data() + kVolumeHeaderBytes;
  if (h.dtype == Dtype::Float32) {
    Image v(dims);
    v.spacing = h.spacing;
    for (std::size_t i = 0; i < n; ++i) {
      v.data[i] = std::bit_cast<float>(get_u32(p + 4 * i));
      if (!std::isfinite(v.data[i])) throw FormatError(FormatErrorKind::NonFinite, "volume contains NaN or infinity");
    }
    return v;
  }
  Mask m(dims);
  m.spacing = h.spacing;
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] > 1) throw FormatError(FormatErrorKind::Malformed, "mask voxel is neither 0 nor 1");
    m.data[i] = p[i];
  }
  return m;
}

void write_volume(const Image& v, const std::string& path) { write_file(path, encode_volume(v)); }
void write_volume(const Mask& m, const std::string& path) { write_file(path, encode_volume(m)); }

std::variant<Image, Mask> read_volume(const std::string& path) { return decode_volume(read_file(path)); }

Image read_image(const std::string& path) {
  auto v = read_volume(path);
  if (auto* img = std::get_if<Image>(&v)) return std::move(*img);
  const Mask& m = std::get<Mask>(v);
  Image out(m.dims);
  out.spacing = m.spacing;
  std::transform(m.data.begin(), m.data.end(), out.data.begin(), [](std::uint8_t x) { return float(x); });
  return out;
}

Mask read_mask(const std::string& path) {
  auto v = read_volume(path);
  if (auto* m = std::get_if<Mask>(&v)) return std::move(*m);
  throw FormatError(FormatErrorKind::UnknownDtype, path + " holds intensities, expected a mask");
}

}  // namespace deepbv
