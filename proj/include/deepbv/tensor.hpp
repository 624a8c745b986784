#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deepbv {

/// Raised whenever operand shapes do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// (batch, channels, depth, height, width); width varies fastest in memory.
struct Shape5 {
  int n = 0;
  int c = 0;
  int d = 0;
  int h = 0;
  int w = 0;

  std::size_t spatial() const { return std::size_t(d) * h * w; }
  std::size_t per_sample() const { return std::size_t(c) * spatial(); }
  std::size_t size() const { return std::size_t(n) * per_sample(); }
  bool operator==(const Shape5&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(d) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

enum class Mode { Train, Eval };

/// Dense batched multi-channel volume. Storage is an Eigen column vector so
/// whole-tensor arithmetic can be written as array expressions.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape5 shape) : shape_(shape), data_(Storage::Zero(Eigen::Index(shape.size()))) {}
  Tensor(Shape5 shape, Scalar fill)
      : shape_(shape), data_(Storage::Constant(Eigen::Index(shape.size()), fill)) {}

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape5& shape() const { return shape_; }
  std::size_t size() const { return shape_.size(); }
  bool empty() const { return size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> span() { return {data(), size()}; }
  std::span<const Scalar> span() const { return {data(), size()}; }

  Storage& vec() { return data_; }
  const Storage& vec() const { return data_; }
  auto array() { return data_.array(); }
  auto array() const { return data_.array(); }

  std::size_t index(int n, int c, int z, int y, int x) const {
    return (((std::size_t(n) * shape_.c + c) * shape_.d + z) * shape_.h + y) * shape_.w + x;
  }
  Scalar& operator()(int n, int c, int z, int y, int x) { return data_[Eigen::Index(index(n, c, z, y, x))]; }
  Scalar operator()(int n, int c, int z, int y, int x) const {
    return data_[Eigen::Index(index(n, c, z, y, x))];
  }
  Scalar& operator[](std::size_t i) { return data_[Eigen::Index(i)]; }
  Scalar operator[](std::size_t i) const { return data_[Eigen::Index(i)]; }

  /// Pointer to the first voxel of (sample, channel).
  Scalar* channel(int n, int c) { return data() + (std::size_t(n) * shape_.c + c) * shape_.spatial(); }
  const Scalar* channel(int n, int c) const {
    return data() + (std::size_t(n) * shape_.c + c) * shape_.spatial();
  }
  Scalar* sample(int n) { return data() + std::size_t(n) * shape_.per_sample(); }
  const Scalar* sample(int n) const { return data() + std::size_t(n) * shape_.per_sample(); }

  /// Reinterprets the element order under a new shape of equal size.
  void reshape(Shape5 shape) {
    if (shape.size() != shape_.size()) {
      throw ShapeError("reshape " + shape_.str() + " -> " + shape.str() + " changes element count");
    }
    shape_ = shape;
  }

  void fill(Scalar v) { data_.setConstant(v); }

  template <typename To>
  Tensor<To> cast() const {
    Tensor<To> out(shape_);
    out.vec() = data_.template cast<To>();
    return out;
  }

  bool all_finite() const { return data_.allFinite(); }

 private:
  Shape5 shape_{};
  Storage data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename Scalar>
Scalar dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.size() != b.size()) throw ShapeError("dot: size mismatch " + a.shape().str() + " vs " + b.shape().str());
  return a.vec().dot(b.vec());
}

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  if (a.empty()) return Scalar(0);
  return (a.array() - b.array()).abs().maxCoeff();
}

/// Zero-padded copy of each channel with `pad` voxels on every face.
template <typename Scalar>
Tensor<Scalar> pad_spatial(const Tensor<Scalar>& x, int lo, int hi) {
  const Shape5& s = x.shape();
  Tensor<Scalar> out({s.n, s.c, s.d + lo + hi, s.h + lo + hi, s.w + lo + hi});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int z = 0; z < s.d; ++z)
        for (int y = 0; y < s.h; ++y) {
          const Scalar* src = &x.channel(n, c)[(std::size_t(z) * s.h + y) * s.w];
          Scalar* dst = &out(n, c, z + lo, y + lo, lo);
          std::copy(src, src + s.w, dst);
        }
  return out;
}

}  // namespace deepbv
