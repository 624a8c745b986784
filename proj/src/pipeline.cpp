#include "deepbv/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace deepbv {

Image downsample2(const Image& v) {
  for (int d : v.dims)
    if (d < 1) throw ShapeError("downsample2: empty volume");
  const std::array<int, 3> od{(v.dims[0] + 1) / 2, (v.dims[1] + 1) / 2, (v.dims[2] + 1) / 2};
  Image out(od);
  for (std::size_t a = 0; a < 3; ++a) out.spacing[a] = 2 * v.spacing[a];
  for (int z = 0; z < od[2]; ++z)
    for (int y = 0; y < od[1]; ++y)
      for (int x = 0; x < od[0]; ++x) {
        double sum = 0;
        int n = 0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int sx = 2 * x + dx, sy = 2 * y + dy, sz = 2 * z + dz;
              if (sx >= v.dims[0] || sy >= v.dims[1] || sz >= v.dims[2]) continue;
              sum += v.at(sx, sy, sz);
              ++n;
            }
        out.at(x, y, z) = float(sum / n);
      }
  return out;
}

namespace {

template <typename T>
Volume<T> pad_high(const Volume<T>& v, int min_side, std::array<int, 3>* pad) {
  std::array<int, 3> od{};
  for (std::size_t a = 0; a < 3; ++a) {
    od[a] = std::max(v.dims[a], min_side);
    if (pad) (*pad)[a] = od[a] - v.dims[a];
  }
  if (od == v.dims) return v;
  Volume<T> out(od, T(0));
  out.spacing = v.spacing;
  for (int z = 0; z < v.dims[2]; ++z)
    for (int y = 0; y < v.dims[1]; ++y)
      std::copy_n(&v.at(0, y, z), v.dims[0], &out.at(0, y, z));
  return out;
}

}  // namespace

PaddedImage pad_to_min(const Image& v, int min_side) {
  PaddedImage p;
  p.original = v.dims;
  p.volume = pad_high(v, min_side, &p.pad_high);
  return p;
}

Mask pad_to_min(const Mask& m, int min_side) { return pad_high(m, min_side, nullptr); }

std::vector<int> enumerate_windows(int dim, int window, int stride) {
  if (window < 1 || stride < 1) throw std::invalid_argument("enumerate_windows: window and stride must be positive");
  if (dim < window)
    throw ShapeError("enumerate_windows: dim " + std::to_string(dim) + " is smaller than window " + std::to_string(window));
  std::vector<int> out;
  for (int a = 0; a + window <= dim; a += stride) out.push_back(a);
  if (out.back() != dim - window) out.push_back(dim - window);
  return out;
}

std::vector<double> score_windows(const Image& volume_ds, const std::vector<std::array<int, 3>>& anchors, int window,
                                  const std::vector<const Net*>& classifiers, int batch) {
  if (classifiers.empty()) throw std::invalid_argument("score_windows: no classifiers");
  batch = std::max(1, batch);
  std::vector<double> out(anchors.size(), 0.0);
  const std::size_t cube = std::size_t(window) * window * window;
  for (std::size_t first = 0; first < anchors.size(); first += std::size_t(batch)) {
    const int n = int(std::min(anchors.size() - first, std::size_t(batch)));
    TensorF x(Shape5{n, 1, window, window, window});
    for (int b = 0; b < n; ++b) crop_cube(volume_ds, anchors[first + std::size_t(b)], window, x.data() + b * cube);
    for (const Net* net : classifiers) {
      const TensorF logits = net->infer(x);
      const TensorF p = activation(logits, Activation::Softmax2);
      // Float probabilities summed in double: k equal terms divide back to
      // the same value, so identical ensembles match a single network.
      for (int b = 0; b < n; ++b) out[first + std::size_t(b)] += double(p.sample(b)[1]);
    }
  }
  for (double& v : out) v /= double(classifiers.size());
  return out;
}

LocalizationResult localize(const Image& volume, const std::vector<const Net*>& classifiers, const PipelineConfig& cfg) {
  if (classifiers.empty()) throw std::invalid_argument("localize: no classifiers");
  for (std::size_t a = 0; a < 3; ++a)
    if (volume.dims[a] < cfg.box_side) throw ShapeError("localize: volume must be padded to the box side first");
  const int w = cfg.window();
  for (const Net* n : classifiers)
    if (n->spec().input_side != w) throw ShapeError("localize: classifier input side differs from the window");

  const Image ds = pad_to_min(downsample2(volume), w).volume;
  const auto xs = enumerate_windows(ds.dims[0], w, cfg.scan_stride);
  const auto ys = enumerate_windows(ds.dims[1], w, cfg.scan_stride);
  const auto zs = enumerate_windows(ds.dims[2], w, cfg.scan_stride);
  std::vector<std::array<int, 3>> anchors;
  for (int z : zs)
    for (int y : ys)
      for (int x : xs) anchors.push_back({x, y, z});
  const auto probs = score_windows(ds, anchors, w, classifiers, cfg.window_batch);

  LocalizationResult r;
  r.windows_scanned = anchors.size();
  r.ensemble_size = int(classifiers.size());
  std::array<double, 3> sum{0, 0, 0};
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (!(probs[i] > cfg.loc_threshold)) continue;
    r.positives.push_back({anchors[i], probs[i]});
    for (std::size_t a = 0; a < 3; ++a) sum[a] += anchors[i][a] + w / 2.0;
  }
  std::size_t used = r.positives.size();
  if (used == 0) {
    r.fallback = true;
    const std::size_t best = std::size_t(std::max_element(probs.begin(), probs.end()) - probs.begin());
    for (std::size_t a = 0; a < 3; ++a) sum[a] = anchors[best][a] + w / 2.0;
    used = 1;
  }
  for (std::size_t a = 0; a < 3; ++a) {
    const int center_ds = int(std::floor(sum[a] / double(used) + 0.5));
    r.center[a] = 2 * center_ds;
    r.box.anchor[a] = std::clamp(r.center[a] - cfg.box_side / 2, 0, volume.dims[a] - cfg.box_side);
  }
  r.box.side = cfg.box_side;
  return r;
}

SegmentationResult segment_box(const Image& volume, const BoundingBox& box, const std::vector<const Net*>& nets,
                               double threshold) {
  if (nets.empty()) throw std::invalid_argument("segment_box: no networks");
  for (std::size_t a = 0; a < 3; ++a)
    if (box.anchor[a] < 0 || box.anchor[a] + box.side > volume.dims[a])
      throw ShapeError("segment_box: box leaves the volume");
  const int s = box.side;
  TensorF x(Shape5{1, 1, s, s, s});
  crop_cube(volume, box.anchor, s, x.data());

  SegmentationResult r;
  r.box = box;
  r.mask = Mask(volume.dims, 0);
  r.mask.spacing = volume.spacing;
  for (const Net* net : nets) {
    if (net->spec().input_side != s) throw ShapeError("segment_box: network input side differs from the box");
    const TensorF p = net->infer(x);
    Image map({s, s, s});
    map.spacing = volume.spacing;
    std::copy(p.data(), p.data() + p.size(), map.data.begin());
    for (int z = 0; z < s; ++z)
      for (int y = 0; y < s; ++y)
        for (int xx = 0; xx < s; ++xx)
          if (map.at(xx, y, z) > threshold) r.mask.at(box.anchor[0] + xx, box.anchor[1] + y, box.anchor[2] + z) = 1;
    r.probabilities.push_back(std::move(map));
  }
  return r;
}

EndToEndResult segment_end_to_end(const Image& volume, const std::vector<const Net*>& loc_nets,
                                  const std::vector<const Net*>& seg_nets, const PipelineConfig& cfg) {
  const PaddedImage padded = pad_to_min(volume, cfg.box_side);
  EndToEndResult r;
  r.localization = localize(padded.volume, loc_nets, cfg);
  r.segmentation = segment_box(padded.volume, r.localization.box, seg_nets, cfg.seg_threshold);
  Mask kept = remove_small_components(r.segmentation.mask, cfg.min_component, cfg.connectivity, &r.segmentation.census);
  r.segmentation.mask = crop(kept, {0, 0, 0}, padded.original);
  return r;
}

std::string inference_record(const std::string& name, const EndToEndResult& r, const std::optional<double>& dsc) {
  const auto& l = r.localization;
  const auto& c = r.segmentation.census;
  nlohmann::json j{{"volume", name},
                   {"box", {{"anchor", l.box.anchor}, {"side", l.box.side}}},
                   {"center", l.center},
                   {"windows", l.windows_scanned},
                   {"positive_windows", l.positives.size()},
                   {"ensemble", l.ensemble_size},
                   {"fallback", l.fallback},
                   {"components_before", c.before},
                   {"components_after", c.after},
                   {"removed_voxels", c.removed_voxels},
                   {"mask_voxels", count_nonzero(r.segmentation.mask)}};
  if (dsc) j["dsc"] = *dsc;
  return j.dump();
}

}  // namespace deepbv
