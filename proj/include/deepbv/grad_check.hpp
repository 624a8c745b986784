#pragma once

#include "deepbv/layers.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace deepbv {

/// Outcome of comparing analytic gradients with central finite differences.
/// Each group's error is max|analytic - numeric| / max|numeric|, so tiny
/// individual entries cannot dominate.
struct GradCheckReport {
  struct Group {
    std::string name;
    double max_rel_error = 0.0;
    bool finite = true;
  };
  std::vector<Group> groups;
  double tolerance = 0.0;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& g : groups) m = std::max(m, g.max_rel_error);
    return m;
  }
  bool finite() const {
    return std::all_of(groups.begin(), groups.end(), [](const Group& g) { return g.finite; });
  }
  bool passed() const { return finite() && max_rel_error() <= tolerance; }
};

namespace detail {
inline GradCheckReport::Group compare_gradients(std::string name, const std::vector<double>& analytic,
                                                const std::vector<double>& numeric) {
  GradCheckReport::Group g{std::move(name), 0.0, true};
  double scale = 1e-12, worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (!std::isfinite(analytic[i]) || !std::isfinite(numeric[i])) {
      g.finite = false;
      g.max_rel_error = INFINITY;
      return g;
    }
    scale = std::max(scale, std::abs(numeric[i]));
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]));
  }
  g.max_rel_error = worst / scale;
  return g;
}
}  // namespace detail

/// Checks a layer's backward pass in 64-bit. The scalar loss is a fixed
/// random weighting of the outputs (sum(r * y)); a plain sum would make the
/// input gradient of normalization layers identically zero.
inline GradCheckReport grad_check(Layer<double>& layer, const Shape5& input_shape, double tolerance,
                                  Mode mode = Mode::Train, std::uint64_t seed = 7, double h = 1e-3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  TensorD x(input_shape);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = normal(rng);
  for (auto& p : layer.params())
    for (Eigen::Index i = 0; i < p.value->size(); ++i)
      if ((*p.value)[i] == 0.0) (*p.value)[i] = 0.5 * normal(rng);

  const std::uint64_t fwd_seed = rng();
  TensorD y = layer.forward(x, mode, fwd_seed);
  TensorD r(y.shape());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = normal(rng);

  auto loss = [&](const TensorD& in) { return dot(layer.forward(in, mode, fwd_seed), r); };

  layer.zero_grad();
  layer.forward(x, mode, fwd_seed);
  const TensorD gx = layer.backward(r);

  GradCheckReport report;
  report.tolerance = tolerance;

  std::vector<double> analytic(gx.span().begin(), gx.span().end());
  std::vector<double> numeric(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double lp = loss(x);
    x[i] = keep - h;
    const double lm = loss(x);
    x[i] = keep;
    numeric[i] = (lp - lm) / (2.0 * h);
  }
  report.groups.push_back(detail::compare_gradients("input", analytic, numeric));

  for (auto& p : layer.params()) {
    Vector<double>& v = *p.value;
    analytic.assign(p.grad->data(), p.grad->data() + p.grad->size());
    numeric.assign(std::size_t(v.size()), 0.0);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double lp = loss(x);
      v[i] = keep - h;
      const double lm = loss(x);
      v[i] = keep;
      numeric[std::size_t(i)] = (lp - lm) / (2.0 * h);
    }
    report.groups.push_back(detail::compare_gradients(p.name, analytic, numeric));
  }
  return report;
}

}  // namespace deepbv
