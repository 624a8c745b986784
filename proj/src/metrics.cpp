#include "deepbv/metrics.hpp"

#include "deepbv/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace deepbv {

double dsc(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw ShapeError("dsc: masks differ in shape");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

double box_containment(const BoundingBox& box, const Mask& mask) {
  std::size_t total = 0, inside = 0;
  for (int z = 0; z < mask.dims[2]; ++z)
    for (int y = 0; y < mask.dims[1]; ++y)
      for (int x = 0; x < mask.dims[0]; ++x)
        if (mask.at(x, y, z)) {
          ++total;
          inside += box.contains(x, y, z);
        }
  if (total == 0) throw std::invalid_argument("box_containment: mask is empty");
  return double(inside) / double(total);
}

std::string MetricsReport::to_json_lines() const {
  std::ostringstream out;
  for (const auto& v : volumes) {
    nlohmann::json j{{"type", "volume"}, {"name", v.name}, {"dsc", v.dsc}};
    if (v.containment) j["containment"] = *v.containment;
    out << j.dump() << '\n';
  }
  nlohmann::json s{{"type", "summary"},         {"count", volumes.size()},
                   {"mean_dsc", mean_dsc},       {"failure_threshold", failure_threshold},
                   {"failures", failures},       {"has_boxes", has_boxes}};
  if (has_boxes) {
    s["boxes_full"] = boxes_full;
    s["boxes_95"] = boxes_95;
  }
  out << s.dump() << '\n';
  return out.str();
}

MetricsReport MetricsReport::from_json_lines(const std::string& text) {
  MetricsReport r;
  std::istringstream in(text);
  std::string line;
  bool summary = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const std::string type = j.at("type");
    if (type == "volume") {
      VolumeMetrics v;
      v.name = j.at("name");
      v.dsc = j.at("dsc");
      if (j.contains("containment")) v.containment = j.at("containment").get<double>();
      r.volumes.push_back(v);
    } else if (type == "summary") {
      summary = true;
      r.mean_dsc = j.at("mean_dsc");
      r.failure_threshold = j.at("failure_threshold");
      r.failures = j.at("failures");
      r.has_boxes = j.at("has_boxes");
      if (r.has_boxes) {
        r.boxes_full = j.at("boxes_full");
        r.boxes_95 = j.at("boxes_95");
      }
    }
  }
  if (!summary) throw std::invalid_argument("metrics report has no summary record");
  return r;
}

MetricsReport evaluate(const std::vector<Mask>& predictions, const std::vector<Mask>& ground_truths,
                       const std::vector<BoundingBox>* boxes, const std::vector<std::string>* names) {
  if (predictions.size() != ground_truths.size()) throw std::invalid_argument("evaluate: list lengths differ");
  if (boxes && boxes->size() != predictions.size()) throw std::invalid_argument("evaluate: box list length differs");
  if (names && names->size() != predictions.size()) throw std::invalid_argument("evaluate: name list length differs");
  MetricsReport r;
  r.has_boxes = boxes != nullptr;
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    VolumeMetrics v;
    v.name = names ? (*names)[i] : std::to_string(i);
    v.dsc = dsc(predictions[i], ground_truths[i]);
    sum += v.dsc;
    if (v.dsc < r.failure_threshold) ++r.failures;
    if (boxes) {
      v.containment = box_containment((*boxes)[i], ground_truths[i]);
      r.boxes_full += *v.containment == 1.0;
      r.boxes_95 += *v.containment >= 0.95;
    }
    r.volumes.push_back(std::move(v));
  }
  r.mean_dsc = predictions.empty() ? 0.0 : sum / double(predictions.size());
  return r;
}

namespace {

std::vector<std::uint8_t> pgm(int width, int height, const std::vector<std::uint8_t>& pixels) {
  const std::string head = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

// Slice geometry: the two remaining axes in increasing order are image
// columns and rows.
template <typename T, typename F>
std::vector<std::uint8_t> slice_pixels(const Volume<T>& v, int axis, int index, int& width, int& height, F&& to_byte) {
  const int ca = axis == 0 ? 1 : 0;
  const int ra = axis == 2 ? 1 : 2;
  width = v.dims[std::size_t(ca)];
  height = v.dims[std::size_t(ra)];
  std::vector<std::uint8_t> px;
  px.reserve(std::size_t(width) * height);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      std::array<int, 3> p{};
      p[std::size_t(axis)] = index;
      p[std::size_t(ca)] = c;
      p[std::size_t(ra)] = r;
      px.push_back(to_byte(v.at(p[0], p[1], p[2])));
    }
  return px;
}

}  // namespace

std::vector<std::string> export_slice(const Image& volume, const Mask* mask, int axis, int index,
                                      const std::string& path) {
  if (axis < 0 || axis > 2) throw std::invalid_argument("export_slice: axis must be 0, 1 or 2");
  if (index < 0 || index >= volume.dims[std::size_t(axis)])
    throw std::out_of_range("export_slice: index " + std::to_string(index) + " outside [0, " +
                            std::to_string(volume.dims[std::size_t(axis)]) + ")");
  if (mask && mask->dims != volume.dims) throw ShapeError("export_slice: mask and volume differ in shape");

  int w = 0, h = 0;
  float lo = INFINITY, hi = -INFINITY;
  slice_pixels(volume, axis, index, w, h, [&](float v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    return std::uint8_t(0);
  });
  const auto px = slice_pixels(volume, axis, index, w, h, [&](float v) {
    if (!(hi > lo)) return std::uint8_t(128);
    return std::uint8_t(std::lround(255.0 * (double(v) - lo) / (double(hi) - lo)));
  });
  std::vector<std::string> written{path};
  write_file(path, pgm(w, h, px));
  if (mask) {
    const std::filesystem::path p(path);
    const std::string mpath = (p.parent_path() / (p.stem().string() + "_mask" + p.extension().string())).string();
    write_file(mpath, pgm(w, h, slice_pixels(*mask, axis, index, w, h, [](std::uint8_t m) {
                            return std::uint8_t(m ? 255 : 0);
                          })));
    written.push_back(mpath);
  }
  return written;
}

}  // namespace deepbv
