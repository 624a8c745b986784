#include "deepbv/phantom.hpp"

#include "deepbv/components.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace deepbv {

PhantomConfig PhantomConfig::desk() {
  PhantomConfig c;
  c.dims_min = {88, 88, 88};
  c.dims_max = {104, 104, 104};
  c.bv_max_extent = 36;  // leaves slack inside a 48^3 box
  return c;
}

void PhantomConfig::validate() const {
  for (int a = 0; a < 3; ++a)
    if (dims_min[std::size_t(a)] < 16 || dims_max[std::size_t(a)] < dims_min[std::size_t(a)])
      throw PhantomError("phantom dims range is empty or below 16 voxels");
  if (bv_blobs_min < 1 || bv_blobs_max < bv_blobs_min) throw PhantomError("cavity blob count range is empty");
  if (!(bv_fraction_min > 0 && bv_fraction_max >= bv_fraction_min && bv_fraction_max < 0.2))
    throw PhantomError("cavity fraction range must lie in (0, 0.2)");
  if (!(body_fill > 0.1 && body_fill < 0.5)) throw PhantomError("body_fill must lie in (0.1, 0.5)");
  if (speckle_looks < 1) throw PhantomError("speckle_looks must be at least 1");
}

namespace {

using Vec3 = std::array<double, 3>;

struct Ellipsoid {
  Vec3 center;
  Vec3 radii;
  double norm(double x, double y, double z) const {
    const double a = (x - center[0]) / radii[0], b = (y - center[1]) / radii[1], c = (z - center[2]) / radii[2];
    return a * a + b * b + c * c;
  }
};

enum Label : std::uint8_t { kBackground = 0, kTissue = 1, kCavity = 2 };

// Cavity blobs in unit-free coordinates around the origin; each later blob is
// centered inside an earlier one so the union stays connected.
std::vector<Ellipsoid> cavity_shape(std::mt19937_64& rng, int blobs) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Ellipsoid> out;
  out.push_back({{0, 0, 0}, {0.8 + 0.5 * u(rng), 0.8 + 0.5 * u(rng), 0.8 + 0.5 * u(rng)}});
  for (int i = 1; i < blobs; ++i) {
    const Ellipsoid& parent = out[std::size_t(rng() % out.size())];
    Vec3 dir{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
    const double reach = (0.4 + 0.35 * u(rng)) * std::min({parent.radii[0], parent.radii[1], parent.radii[2]});
    Ellipsoid e;
    for (std::size_t a = 0; a < 3; ++a) {
      e.center[a] = parent.center[a] + dir[a] / len * reach;
      e.radii[a] = 0.5 + 0.6 * u(rng);
    }
    out.push_back(e);
  }
  return out;
}

Ellipsoid place(const Ellipsoid& e, const Vec3& origin, double scale) {
  return {{origin[0] + scale * e.center[0], origin[1] + scale * e.center[1], origin[2] + scale * e.center[2]},
          {scale * e.radii[0], scale * e.radii[1], scale * e.radii[2]}};
}

// Rasterizes the union of the blobs; returns the voxel count.
std::size_t rasterize(const std::vector<Ellipsoid>& blobs, Mask& out) {
  std::fill(out.data.begin(), out.data.end(), 0);
  std::size_t count = 0;
  for (const Ellipsoid& e : blobs) {
    std::array<int, 3> lo{}, hi{};
    for (std::size_t a = 0; a < 3; ++a) {
      lo[a] = std::max(0, int(std::floor(e.center[a] - e.radii[a])));
      hi[a] = std::min(out.dims[a] - 1, int(std::ceil(e.center[a] + e.radii[a])));
    }
    for (int z = lo[2]; z <= hi[2]; ++z)
      for (int y = lo[1]; y <= hi[1]; ++y)
        for (int x = lo[0]; x <= hi[0]; ++x)
          if (e.norm(x, y, z) <= 1.0 && !out.at(x, y, z)) {
            out.at(x, y, z) = 1;
            ++count;
          }
  }
  return count;
}

bool single_component(const Mask& m) { return label_components(m, 26).sizes.size() == 1; }

}  // namespace

Phantom generate_phantom(const PhantomConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uniform_int = [&](int lo, int hi) { return lo + int(rng() % std::uint64_t(hi - lo + 1)); };

  std::array<int, 3> dims{};
  for (std::size_t a = 0; a < 3; ++a) dims[a] = uniform_int(cfg.dims_min[a], cfg.dims_max[a]);
  const double total = double(dims[0]) * dims[1] * dims[2];

  Ellipsoid head;
  for (std::size_t a = 0; a < 3; ++a) {
    head.radii[a] = cfg.body_fill * dims[a] * (0.9 + 0.15 * u(rng));
    head.center[a] = dims[a] * (0.5 + 0.06 * (u(rng) - 0.5));
  }
  // The trunk leans off the head in a random direction and may leave the
  // field of view.
  Ellipsoid trunk;
  {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 dir{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
    for (std::size_t a = 0; a < 3; ++a) {
      trunk.center[a] = head.center[a] + 0.9 * head.radii[a] * dir[a] / len;
      trunk.radii[a] = (0.6 + 0.2 * u(rng)) * head.radii[a];
    }
  }

  // Cavity: pick a target volume, shape it, scale it to the target, and
  // keep it well inside the head.
  Mask mask(dims, 0);
  mask.spacing = cfg.spacing;
  bool placed = false;
  for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
    const double target = total * (cfg.bv_fraction_min + (cfg.bv_fraction_max - cfg.bv_fraction_min) * u(rng));
    const auto shape = cavity_shape(rng, uniform_int(cfg.bv_blobs_min, cfg.bv_blobs_max));
    Vec3 origin{};
    for (std::size_t a = 0; a < 3; ++a) origin[a] = head.center[a] + 0.3 * head.radii[a] * (2 * u(rng) - 1);
    double sum = 0;
    for (const auto& e : shape) sum += 4.0 / 3.0 * M_PI * e.radii[0] * e.radii[1] * e.radii[2];
    double scale = std::cbrt(target / sum);
    std::vector<Ellipsoid> blobs;
    std::size_t count = 0;
    for (int it = 0; it < 3; ++it) {
      blobs.clear();
      for (const auto& e : shape) blobs.push_back(place(e, origin, scale));
      count = rasterize(blobs, mask);
      if (count == 0) break;
      scale *= std::cbrt(target / double(count));
    }
    if (count == 0) continue;
    const double fraction = double(count) / total;
    if (fraction < 0.5 * cfg.bv_fraction_min || fraction > 2.0 * cfg.bv_fraction_max) continue;
    bool inside = true;
    std::array<int, 3> lo = dims, hi{-1, -1, -1};
    for (int z = 0; z < dims[2] && inside; ++z)
      for (int y = 0; y < dims[1] && inside; ++y)
        for (int x = 0; x < dims[0] && inside; ++x) {
          if (!mask.at(x, y, z)) continue;
          if (head.norm(x, y, z) > 0.8 * 0.8) inside = false;
          const std::array<int, 3> p{x, y, z};
          for (std::size_t a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
          }
        }
    if (cfg.bv_max_extent > 0)
      for (std::size_t a = 0; a < 3; ++a)
        if (hi[a] - lo[a] + 1 > cfg.bv_max_extent) inside = false;
    placed = inside && single_component(mask);
  }
  if (!placed) throw PhantomError("could not place a connected cavity inside the body");

  Volume<std::uint8_t> label(dims, kBackground);
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) {
        if (mask.at(x, y, z))
          label.at(x, y, z) = kCavity;
        else if (head.norm(x, y, z) <= 1.0 || trunk.norm(x, y, z) <= 1.0)
          label.at(x, y, z) = kTissue;
      }

  Phantom out;
  Image mean(dims);
  mean.spacing = cfg.spacing;
  const float level[3] = {cfg.background, cfg.tissue, cfg.bv};
  for (std::size_t i = 0; i < label.size(); ++i) mean.data[i] = level[label.data[i]];

  // Missing boundary: a spherical cap on the head surface fades to
  // background-like intensity.
  if (u(rng) < cfg.missing_boundary_prob) {
    out.missing_boundary = true;
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 dir{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
    Vec3 p;
    for (std::size_t a = 0; a < 3; ++a) p[a] = head.center[a] + head.radii[a] * dir[a] / len;
    const double r = (0.25 + 0.15 * u(rng)) * std::min({head.radii[0], head.radii[1], head.radii[2]});
    for (int z = 0; z < dims[2]; ++z)
      for (int y = 0; y < dims[1]; ++y)
        for (int x = 0; x < dims[0]; ++x) {
          const double dx = x - p[0], dy = y - p[1], dz = z - p[2];
          if (label.at(x, y, z) == kTissue && dx * dx + dy * dy + dz * dz <= r * r)
            mean.at(x, y, z) *= float(cfg.missing_boundary_dim);
        }
  }

  // Motion: one slab of z-slices slides sideways; image and mask move
  // together. A shift that splits the cavity is redrawn.
  if (u(rng) < cfg.motion_prob && cfg.motion_max_shift > 0) {
    for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
      const int thickness = uniform_int(4, std::max(4, dims[2] / 8));
      const int z0 = uniform_int(0, dims[2] - thickness);
      const int axis = int(rng() % 2);
      const int shift = uniform_int(1, cfg.motion_max_shift) * (rng() % 2 ? 1 : -1);
      Image moved = mean;
      Mask moved_mask = mask;
      for (int z = z0; z < z0 + thickness; ++z)
        for (int y = 0; y < dims[1]; ++y)
          for (int x = 0; x < dims[0]; ++x) {
            int sx = x, sy = y;
            (axis == 0 ? sx : sy) -= shift;
            const bool valid = sx >= 0 && sy >= 0 && sx < dims[0] && sy < dims[1];
            moved.at(x, y, z) = valid ? mean.at(sx, sy, z) : cfg.background;
            moved_mask.at(x, y, z) = valid ? mask.at(sx, sy, z) : 0;
          }
      if (count_nonzero(moved_mask) == 0 || !single_component(moved_mask)) continue;
      mean = std::move(moved);
      mask = std::move(moved_mask);
      out.motion = true;
      break;
    }
  }

  std::gamma_distribution<float> speckle(float(cfg.speckle_looks), 1.0f / float(cfg.speckle_looks));
  out.image = std::move(mean);
  for (float& v : out.image.data) v *= speckle(rng);
  out.mask = std::move(mask);
  return out;
}

}  // namespace deepbv
