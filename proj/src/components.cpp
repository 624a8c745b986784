#include "deepbv/components.hpp"

#include <array>
#include <numeric>
#include <stdexcept>

namespace deepbv {

namespace {

// Neighbours already visited in a forward x-fastest scan.
std::vector<std::array<int, 3>> backward_offsets(int connectivity) {
  if (connectivity != 6 && connectivity != 18 && connectivity != 26)
    throw std::invalid_argument("connectivity must be 6, 18 or 26");
  std::vector<std::array<int, 3>> out;
  for (int dz = -1; dz <= 0; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        const int nonzero = (dx != 0) + (dy != 0) + (dz != 0);
        if ((connectivity == 6 && nonzero > 1) || (connectivity == 18 && nonzero > 2)) continue;
        out.push_back({dx, dy, dz});
      }
  return out;
}

struct UnionFind {
  std::vector<std::int32_t> parent;
  std::int32_t make() {
    parent.push_back(std::int32_t(parent.size()));
    return parent.back();
  }
  std::int32_t find(std::int32_t a) {
    while (parent[std::size_t(a)] != a) {
      parent[std::size_t(a)] = parent[std::size_t(parent[std::size_t(a)])];
      a = parent[std::size_t(a)];
    }
    return a;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent[std::size_t(a)] = b;  // smaller provisional label stays root
  }
};

}  // namespace

Components label_components(const Mask& mask, int connectivity) {
  const auto offsets = backward_offsets(connectivity);
  const auto [nx, ny, nz] = mask.dims;
  Volume<std::int32_t> prov(mask.dims, -1);
  UnionFind uf;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!mask.at(x, y, z)) continue;
        std::int32_t label = -1;
        for (const auto& o : offsets) {
          const int qx = x + o[0], qy = y + o[1], qz = z + o[2];
          if (qx < 0 || qy < 0 || qz < 0 || qx >= nx || qy >= ny) continue;
          const std::int32_t l = prov.at(qx, qy, qz);
          if (l < 0) continue;
          if (label < 0)
            label = l;
          else
            uf.unite(label, l);
        }
        prov.at(x, y, z) = label < 0 ? uf.make() : label;
      }

  // Roots are the smallest provisional label of their set, and provisional
  // labels grow in scan order, so numbering roots in increasing order numbers
  // components by first voxel.
  std::vector<std::int32_t> final_label(uf.parent.size(), 0);
  Components out;
  for (std::size_t i = 0; i < uf.parent.size(); ++i) {
    if (uf.find(std::int32_t(i)) == std::int32_t(i)) {
      out.sizes.push_back(0);
      final_label[i] = std::int32_t(out.sizes.size());
    }
  }
  out.labels = Volume<std::int32_t>(mask.dims, 0);
  out.labels.spacing = mask.spacing;
  for (std::size_t i = 0; i < prov.size(); ++i) {
    if (prov.data[i] < 0) continue;
    const std::int32_t l = final_label[std::size_t(uf.find(prov.data[i]))];
    out.labels.data[i] = l;
    ++out.sizes[std::size_t(l - 1)];
  }
  return out;
}

Mask remove_small_components(const Mask& mask, std::size_t min_voxels, int connectivity, ComponentCensus* census) {
  const Components comp = label_components(mask, connectivity);
  Mask out(mask.dims, 0);
  out.spacing = mask.spacing;
  ComponentCensus c;
  c.before = comp.sizes.size();
  for (std::size_t s : comp.sizes) {
    if (s >= min_voxels)
      ++c.after;
    else
      c.removed_voxels += s;
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const std::int32_t l = comp.labels.data[i];
    if (l > 0 && comp.sizes[std::size_t(l - 1)] >= min_voxels) out.data[i] = 1;
  }
  if (census) *census = c;
  return out;
}

}  // namespace deepbv
