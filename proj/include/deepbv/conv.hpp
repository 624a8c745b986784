#pragma once

#include "deepbv/detail/conv_fast.hpp"
#include "deepbv/parallel.hpp"
#include "deepbv/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <type_traits>

namespace deepbv {

enum class Padding { Same, Valid };

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Full k^3 kernel, weights laid out [out][in][kz][ky][kx].
template <typename Scalar>
struct DenseKernel3D {
  int out_channels = 0;
  int in_channels = 0;
  int k = 0;
  Vector<Scalar> weights;
  Vector<Scalar> bias;  // empty when the layer has no bias

  DenseKernel3D() = default;
  DenseKernel3D(int cout, int cin, int ksize, bool with_bias)
      : out_channels(cout),
        in_channels(cin),
        k(ksize),
        weights(Vector<Scalar>::Zero(Eigen::Index(cout) * cin * ksize * ksize * ksize)),
        bias(with_bias ? Vector<Scalar>::Zero(cout) : Vector<Scalar>()) {}

  bool has_bias() const { return bias.size() > 0; }
  int taps() const { return k * k * k; }
  std::size_t parameter_count() const { return std::size_t(weights.size() + bias.size()); }

  Scalar& at(int co, int ci, int z, int y, int x) {
    return weights[((Eigen::Index(co) * in_channels + ci) * k + z) * k * k + Eigen::Index(y) * k + x];
  }
  Scalar at(int co, int ci, int z, int y, int x) const {
    return weights[((Eigen::Index(co) * in_channels + ci) * k + z) * k * k + Eigen::Index(y) * k + x];
  }

  /// out_channels x (in_channels * k^3) view used by the GEMM paths.
  Eigen::Map<const RowMatrix<Scalar>> matrix() const {
    return {weights.data(), out_channels, Eigen::Index(in_channels) * taps()};
  }
  Eigen::Map<RowMatrix<Scalar>> matrix() {
    return {weights.data(), out_channels, Eigen::Index(in_channels) * taps()};
  }
};

/// Cross-constrained kernel: per (out, in) pair, three orthogonal 1D filters
/// that sum into a k^3 footprint. Filter taps are laid out [out][in][t];
/// axis 0 runs along x, 1 along y, 2 along z.
template <typename Scalar>
struct CrossKernel3D {
  int out_channels = 0;
  int in_channels = 0;
  int length = 7;
  std::array<Vector<Scalar>, 3> filters;
  Vector<Scalar> bias;

  CrossKernel3D() = default;
  CrossKernel3D(int cout, int cin, int len, bool with_bias)
      : out_channels(cout), in_channels(cin), length(len), bias(with_bias ? Vector<Scalar>::Zero(cout) : Vector<Scalar>()) {
    for (auto& f : filters) f = Vector<Scalar>::Zero(Eigen::Index(cout) * cin * len);
  }

  bool has_bias() const { return bias.size() > 0; }
  std::size_t parameter_count() const { return std::size_t(3 * filters[0].size() + bias.size()); }

  Scalar& tap(int axis, int co, int ci, int t) { return filters[axis][(Eigen::Index(co) * in_channels + ci) * length + t]; }
  Scalar tap(int axis, int co, int ci, int t) const {
    return filters[axis][(Eigen::Index(co) * in_channels + ci) * length + t];
  }
};

template <typename Scalar>
struct DenseConvGrads {
  Tensor<Scalar> input;
  DenseKernel3D<Scalar> kernel;  // weight and bias gradients
};

template <typename Scalar>
struct CrossConvGrads {
  Tensor<Scalar> input;
  CrossKernel3D<Scalar> kernel;
};

inline int conv_out_dim(int in, int k, int stride, int pad_total) { return (in + pad_total - k) / stride + 1; }

namespace detail {

struct ConvGeometry {
  int k, stride, pad_lo;
  int cin, d, h, w;     // input
  int od, oh, ow;       // output
  std::size_t out_plane() const { return std::size_t(oh) * ow; }
  std::size_t out_spatial() const { return std::size_t(od) * oh * ow; }
};

inline ConvGeometry conv_geometry(const Shape5& in, int k, int stride, Padding padding) {
  if (stride < 1) throw ShapeError("conv3d: stride must be positive");
  int pad_total = 0;
  if (padding == Padding::Same) {
    if (k % 2 == 0) throw ShapeError("conv3d: 'same' padding needs an odd kernel, got k=" + std::to_string(k));
    pad_total = k - 1;
  }
  ConvGeometry g{k, stride, pad_total / 2, in.c, in.d, in.h, in.w, 0, 0, 0};
  if (in.d + pad_total < k || in.h + pad_total < k || in.w + pad_total < k) {
    throw ShapeError("conv3d: input " + in.str() + " smaller than kernel " + std::to_string(k));
  }
  g.od = conv_out_dim(in.d, k, stride, pad_total);
  g.oh = conv_out_dim(in.h, k, stride, pad_total);
  g.ow = conv_out_dim(in.w, k, stride, pad_total);
  return g;
}

/// Rows are (ci, kz, ky, kx); columns are the output voxels of slices [oz0, oz1).
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, int oz0, int oz1, Scalar* col) {
  const int k = g.k;
  const std::size_t ncols = std::size_t(oz1 - oz0) * g.out_plane();
  const std::size_t in_spatial = std::size_t(g.d) * g.h * g.w;
  std::size_t row = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    const Scalar* xc = x + ci * in_spatial;
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++row) {
          Scalar* dst = col + row * ncols;
          for (int oz = oz0; oz < oz1; ++oz) {
            const int iz = oz * g.stride + kz - g.pad_lo;
            for (int oy = 0; oy < g.oh; ++oy) {
              const int iy = oy * g.stride + ky - g.pad_lo;
              const bool row_ok = iz >= 0 && iz < g.d && iy >= 0 && iy < g.h;
              const Scalar* src = row_ok ? xc + (std::size_t(iz) * g.h + iy) * g.w : nullptr;
              for (int ox = 0; ox < g.ow; ++ox) {
                const int ix = ox * g.stride + kx - g.pad_lo;
                *dst++ = (row_ok && ix >= 0 && ix < g.w) ? src[ix] : Scalar(0);
              }
            }
          }
        }
  }
}

/// Adjoint of im2col: scatters-adds columns back into the input gradient.
template <typename Scalar>
void col2im_add(const Scalar* col, const ConvGeometry& g, int oz0, int oz1, Scalar* gx) {
  const int k = g.k;
  const std::size_t ncols = std::size_t(oz1 - oz0) * g.out_plane();
  const std::size_t in_spatial = std::size_t(g.d) * g.h * g.w;
  std::size_t row = 0;
  for (int ci = 0; ci < g.cin; ++ci) {
    Scalar* gc = gx + ci * in_spatial;
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++row) {
          const Scalar* src = col + row * ncols;
          for (int oz = oz0; oz < oz1; ++oz) {
            const int iz = oz * g.stride + kz - g.pad_lo;
            for (int oy = 0; oy < g.oh; ++oy, src += g.ow) {
              const int iy = oy * g.stride + ky - g.pad_lo;
              if (iz < 0 || iz >= g.d || iy < 0 || iy >= g.h) continue;
              Scalar* dst = gc + (std::size_t(iz) * g.h + iy) * g.w;
              for (int ox = 0; ox < g.ow; ++ox) {
                const int ix = ox * g.stride + kx - g.pad_lo;
                if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
              }
            }
          }
        }
  }
}

/// Output z-slices per im2col chunk so the column buffer stays near 8M values.
inline int slices_per_chunk(const ConvGeometry& g) {
  const std::size_t rows = std::size_t(g.cin) * g.k * g.k * g.k;
  const std::size_t per_slice = rows * g.out_plane();
  return int(std::clamp<std::size_t>((std::size_t(1) << 23) / std::max<std::size_t>(per_slice, 1), 1, g.od));
}

template <typename Scalar>
bool use_fast_path(const ConvGeometry& g) {
  return std::is_same_v<Scalar, float> && g.stride == 1 && g.k >= 3 && g.k % 2 == 1 && g.pad_lo == g.k / 2 &&
         fast_conv_eligible(g.k, g.w);
}

/// Kernel for the input gradient of a stride-1 'same' convolution: swap
/// channel roles and reverse the taps.
template <typename Scalar>
DenseKernel3D<Scalar> flipped_transposed(const DenseKernel3D<Scalar>& K) {
  DenseKernel3D<Scalar> F(K.in_channels, K.out_channels, K.k, false);
  const int t = K.taps();
  for (int co = 0; co < K.out_channels; ++co)
    for (int ci = 0; ci < K.in_channels; ++ci)
      for (int i = 0; i < t; ++i)
        F.weights[(Eigen::Index(ci) * K.out_channels + co) * t + (t - 1 - i)] =
            K.weights[(Eigen::Index(co) * K.in_channels + ci) * t + i];
  return F;
}

}  // namespace detail

/// 3D convolution (cross-correlation) with a dense k^3 kernel.
template <typename Scalar>
Tensor<Scalar> conv3d_dense(const Tensor<Scalar>& x, const DenseKernel3D<Scalar>& K, int stride = 1,
                            Padding padding = Padding::Same) {
  const Shape5& s = x.shape();
  if (s.c != K.in_channels) {
    throw ShapeError("conv3d_dense: input has " + std::to_string(s.c) + " channels, kernel expects " +
                     std::to_string(K.in_channels));
  }
  const auto g = detail::conv_geometry(s, K.k, stride, padding);
  Tensor<Scalar> out({s.n, K.out_channels, g.od, g.oh, g.ow});
  const std::size_t out_spatial = g.out_spatial();

  if constexpr (std::is_same_v<Scalar, float>) {
    if (detail::use_fast_path<Scalar>(g)) {
      for (int n = 0; n < s.n; ++n) {
        detail::conv_same_fast(x.sample(n), s.c, s.d, s.h, s.w, K.weights.data(),
                               K.has_bias() ? K.bias.data() : nullptr, K.out_channels, K.k, out.sample(n));
      }
      return out;
    }
  }

  if (K.k == 1 && stride == 1) {
    for (int n = 0; n < s.n; ++n) {
      Eigen::Map<const RowMatrix<Scalar>> X(x.sample(n), s.c, Eigen::Index(out_spatial));
      Eigen::Map<RowMatrix<Scalar>> Y(out.sample(n), K.out_channels, Eigen::Index(out_spatial));
      Y.noalias() = K.matrix() * X;
      if (K.has_bias()) Y.colwise() += K.bias;
    }
    return out;
  }

  const int chunk = detail::slices_per_chunk(g);
  const Eigen::Index rows = Eigen::Index(g.cin) * K.taps();
  RowMatrix<Scalar> col;
  for (int n = 0; n < s.n; ++n) {
    for (int oz0 = 0; oz0 < g.od; oz0 += chunk) {
      const int oz1 = std::min(g.od, oz0 + chunk);
      const Eigen::Index ncols = Eigen::Index(oz1 - oz0) * Eigen::Index(g.out_plane());
      col.resize(rows, ncols);
      detail::im2col(x.sample(n), g, oz0, oz1, col.data());
      Eigen::Map<RowMatrix<Scalar>, 0, Eigen::OuterStride<>> Y(out.sample(n) + oz0 * g.out_plane(), K.out_channels,
                                                                ncols, Eigen::OuterStride<>(out_spatial));
      Y.noalias() = K.matrix() * col;
      if (K.has_bias()) Y.colwise() += K.bias;
    }
  }
  return out;
}

/// Gradients of conv3d_dense with respect to input, weights and bias.
template <typename Scalar>
DenseConvGrads<Scalar> conv3d_dense_backward(const Tensor<Scalar>& x, const DenseKernel3D<Scalar>& K,
                                             const Tensor<Scalar>& grad_out, int stride = 1,
                                             Padding padding = Padding::Same, bool need_input = true) {
  const Shape5& s = x.shape();
  const auto g = detail::conv_geometry(s, K.k, stride, padding);
  const Shape5 expect{s.n, K.out_channels, g.od, g.oh, g.ow};
  if (!(grad_out.shape() == expect)) {
    throw ShapeError("conv3d_dense_backward: grad " + grad_out.shape().str() + ", expected " + expect.str());
  }
  // need_input = false skips the input gradient (first layer of a net).
  DenseConvGrads<Scalar> grads{need_input ? Tensor<Scalar>(s) : Tensor<Scalar>(),
                               DenseKernel3D<Scalar>(K.out_channels, K.in_channels, K.k, K.has_bias())};
  const std::size_t out_spatial = g.out_spatial();
  auto gW = grads.kernel.matrix();

  if (K.has_bias()) {
    for (int n = 0; n < s.n; ++n) {
      Eigen::Map<const RowMatrix<Scalar>> G(grad_out.sample(n), K.out_channels, Eigen::Index(out_spatial));
      grads.kernel.bias += G.rowwise().sum();
    }
  }

  if (K.k == 1 && stride == 1) {
    for (int n = 0; n < s.n; ++n) {
      Eigen::Map<const RowMatrix<Scalar>> X(x.sample(n), s.c, Eigen::Index(out_spatial));
      Eigen::Map<const RowMatrix<Scalar>> G(grad_out.sample(n), K.out_channels, Eigen::Index(out_spatial));
      gW.noalias() += G * X.transpose();
      if (need_input) {
        Eigen::Map<RowMatrix<Scalar>> GX(grads.input.sample(n), s.c, Eigen::Index(out_spatial));
        GX.noalias() = K.matrix().transpose() * G;
      }
    }
    return grads;
  }

  if constexpr (std::is_same_v<Scalar, float>) {
    if (detail::use_fast_path<Scalar>(g)) {
      const auto F = detail::flipped_transposed(K);
      for (int n = 0; n < s.n && need_input; ++n) {
        detail::conv_same_fast(grad_out.sample(n), K.out_channels, g.od, g.oh, g.ow, F.weights.data(), nullptr,
                               K.in_channels, K.k, grads.input.sample(n));
      }
      for (int n = 0; n < s.n; ++n) {
        detail::conv_same_fast_weight_grad(x.sample(n), s.c, s.d, s.h, s.w, grad_out.sample(n), K.out_channels,
                                           K.k, grads.kernel.weights.data());
      }
      return grads;
    }
  }

  const int chunk = detail::slices_per_chunk(g);
  const Eigen::Index rows = Eigen::Index(g.cin) * K.taps();
  RowMatrix<Scalar> col, gcol;
  for (int n = 0; n < s.n; ++n) {
    for (int oz0 = 0; oz0 < g.od; oz0 += chunk) {
      const int oz1 = std::min(g.od, oz0 + chunk);
      const Eigen::Index ncols = Eigen::Index(oz1 - oz0) * Eigen::Index(g.out_plane());
      Eigen::Map<const RowMatrix<Scalar>, 0, Eigen::OuterStride<>> G(
          grad_out.sample(n) + oz0 * g.out_plane(), K.out_channels, ncols, Eigen::OuterStride<>(out_spatial));
      col.resize(rows, ncols);
      detail::im2col(x.sample(n), g, oz0, oz1, col.data());
      gW.noalias() += G * col.transpose();
      if (!need_input) continue;
      gcol.noalias() = K.matrix().transpose() * G;
      detail::col2im_add(gcol.data(), g, oz0, oz1, grads.input.sample(n));
    }
  }
  return grads;
}

/// Dense k^3 kernel equal to the sum of the three axis filters; the shared
/// center tap receives all three center values.
template <typename Scalar>
DenseKernel3D<Scalar> materialize_cross(const CrossKernel3D<Scalar>& Kc) {
  const int L = Kc.length;
  const int c = L / 2;
  DenseKernel3D<Scalar> D(Kc.out_channels, Kc.in_channels, L, Kc.has_bias());
  if (Kc.has_bias()) D.bias = Kc.bias;
  for (int co = 0; co < Kc.out_channels; ++co)
    for (int ci = 0; ci < Kc.in_channels; ++ci)
      for (int t = 0; t < L; ++t) {
        D.at(co, ci, c, c, t) += Kc.tap(0, co, ci, t);
        D.at(co, ci, c, t, c) += Kc.tap(1, co, ci, t);
        D.at(co, ci, t, c, c) += Kc.tap(2, co, ci, t);
      }
  return D;
}

namespace detail {

/// dst[c](p) = src[c](p + offset * e_axis), zero outside the volume.
template <typename Scalar>
void shift_axis(const Scalar* src, int channels, int d, int h, int w, int axis, int offset, Scalar* dst) {
  const std::size_t spatial = std::size_t(d) * h * w;
  std::fill(dst, dst + channels * spatial, Scalar(0));
  for (int c = 0; c < channels; ++c) {
    const Scalar* sc = src + c * spatial;
    Scalar* dc = dst + c * spatial;
    for (int z = 0; z < d; ++z) {
      const int sz = axis == 2 ? z + offset : z;
      if (sz < 0 || sz >= d) continue;
      for (int y = 0; y < h; ++y) {
        const int sy = axis == 1 ? y + offset : y;
        if (sy < 0 || sy >= h) continue;
        const Scalar* srow = sc + (std::size_t(sz) * h + sy) * w;
        Scalar* drow = dc + (std::size_t(z) * h + y) * w;
        if (axis == 0) {
          const int lo = std::max(0, -offset);
          const int hi = std::min(w, w - offset);
          for (int x = lo; x < hi; ++x) drow[x] = srow[x + offset];
        } else {
          std::copy(srow, srow + w, drow);
        }
      }
    }
  }
}

inline int axis_extent(const Shape5& s, int axis) { return axis == 0 ? s.w : (axis == 1 ? s.h : s.d); }

template <typename Scalar>
RowMatrix<Scalar> tap_matrix(const CrossKernel3D<Scalar>& Kc, int axis, int t) {
  RowMatrix<Scalar> F(Kc.out_channels, Kc.in_channels);
  for (int co = 0; co < Kc.out_channels; ++co)
    for (int ci = 0; ci < Kc.in_channels; ++ci) F(co, ci) = Kc.tap(axis, co, ci, t);
  return F;
}

}  // namespace detail

/// Stride-1 'same' convolution with a cross-constrained kernel, computed as
/// the sum of three 1D convolutions (21 taps instead of 343 per pair at k=7).
template <typename Scalar>
Tensor<Scalar> conv3d_cross(const Tensor<Scalar>& x, const CrossKernel3D<Scalar>& Kc) {
  const Shape5& s = x.shape();
  if (s.c != Kc.in_channels) {
    throw ShapeError("conv3d_cross: input has " + std::to_string(s.c) + " channels, kernel expects " +
                     std::to_string(Kc.in_channels));
  }
  const int L = Kc.length;
  const Eigen::Index N = Eigen::Index(s.spatial());
  Tensor<Scalar> out({s.n, Kc.out_channels, s.d, s.h, s.w});
  RowMatrix<Scalar> shifted(s.c, N);
  for (int n = 0; n < s.n; ++n) {
    Eigen::Map<RowMatrix<Scalar>> Y(out.sample(n), Kc.out_channels, N);
    for (int axis = 0; axis < 3; ++axis) {
      for (int t = 0; t < L; ++t) {
        const int offset = t - L / 2;
        if (std::abs(offset) >= detail::axis_extent(s, axis)) continue;
        detail::shift_axis(x.sample(n), s.c, s.d, s.h, s.w, axis, offset, shifted.data());
        Y.noalias() += detail::tap_matrix(Kc, axis, t) * shifted;
      }
    }
    if (Kc.has_bias()) Y.colwise() += Kc.bias;
  }
  return out;
}

template <typename Scalar>
CrossConvGrads<Scalar> conv3d_cross_backward(const Tensor<Scalar>& x, const CrossKernel3D<Scalar>& Kc,
                                             const Tensor<Scalar>& grad_out) {
  const Shape5& s = x.shape();
  const Shape5 expect{s.n, Kc.out_channels, s.d, s.h, s.w};
  if (!(grad_out.shape() == expect)) {
    throw ShapeError("conv3d_cross_backward: grad " + grad_out.shape().str() + ", expected " + expect.str());
  }
  const int L = Kc.length;
  const Eigen::Index N = Eigen::Index(s.spatial());
  CrossConvGrads<Scalar> grads{Tensor<Scalar>(s), CrossKernel3D<Scalar>(Kc.out_channels, Kc.in_channels, L, Kc.has_bias())};
  RowMatrix<Scalar> shifted(s.c, N), back(s.c, N), unshifted(s.c, N);
  for (int n = 0; n < s.n; ++n) {
    Eigen::Map<const RowMatrix<Scalar>> G(grad_out.sample(n), Kc.out_channels, N);
    Eigen::Map<RowMatrix<Scalar>> GX(grads.input.sample(n), s.c, N);
    if (Kc.has_bias()) grads.kernel.bias += G.rowwise().sum();
    for (int axis = 0; axis < 3; ++axis) {
      for (int t = 0; t < L; ++t) {
        const int offset = t - L / 2;
        if (std::abs(offset) >= detail::axis_extent(s, axis)) continue;
        detail::shift_axis(x.sample(n), s.c, s.d, s.h, s.w, axis, offset, shifted.data());
        const RowMatrix<Scalar> gF = G * shifted.transpose();
        for (int co = 0; co < Kc.out_channels; ++co)
          for (int ci = 0; ci < Kc.in_channels; ++ci) grads.kernel.tap(axis, co, ci, t) += gF(co, ci);
        back.noalias() = detail::tap_matrix(Kc, axis, t).transpose() * G;
        detail::shift_axis(back.data(), s.c, s.d, s.h, s.w, axis, -offset, unshifted.data());
        GX += unshifted;
      }
    }
  }
  return grads;
}

/// Learnable 2x up-sampling: adjoint of a stride-2, k=2 convolution with the
/// same kernel. Consumes K.out_channels channels and produces K.in_channels.
template <typename Scalar>
Tensor<Scalar> transpose_conv3d(const Tensor<Scalar>& y, const DenseKernel3D<Scalar>& K,
                                const Vector<Scalar>& bias = Vector<Scalar>()) {
  const Shape5& s = y.shape();
  if (K.k != 2) throw ShapeError("transpose_conv3d: only k=2, stride=2 is supported");
  if (s.c != K.out_channels) {
    throw ShapeError("transpose_conv3d: input has " + std::to_string(s.c) + " channels, kernel maps from " +
                     std::to_string(K.out_channels));
  }
  if (bias.size() != 0 && bias.size() != K.in_channels) throw ShapeError("transpose_conv3d: bias length mismatch");
  const Shape5 out_shape{s.n, K.in_channels, 2 * s.d, 2 * s.h, 2 * s.w};
  Tensor<Scalar> out(out_shape);
  // Geometry of the forward (down-sampling) convolution this op is the adjoint of.
  const detail::ConvGeometry g{2, 2, 0, K.in_channels, out_shape.d, out_shape.h, out_shape.w, s.d, s.h, s.w};
  const Eigen::Index N = Eigen::Index(s.spatial());
  RowMatrix<Scalar> col(Eigen::Index(K.in_channels) * 8, N);
  for (int n = 0; n < s.n; ++n) {
    Eigen::Map<const RowMatrix<Scalar>> Y(y.sample(n), s.c, N);
    col.noalias() = K.matrix().transpose() * Y;
    detail::col2im_add(col.data(), g, 0, s.d, out.sample(n));
    if (bias.size()) {
      Eigen::Map<RowMatrix<Scalar>> O(out.sample(n), K.in_channels, Eigen::Index(out_shape.spatial()));
      O.colwise() += bias;
    }
  }
  return out;
}

template <typename Scalar>
struct TransposeConvGrads {
  Tensor<Scalar> input;
  DenseKernel3D<Scalar> kernel;
  Vector<Scalar> bias;
};

template <typename Scalar>
TransposeConvGrads<Scalar> transpose_conv3d_backward(const Tensor<Scalar>& y, const DenseKernel3D<Scalar>& K,
                                                     const Tensor<Scalar>& grad_out, bool with_bias) {
  const Shape5& s = y.shape();
  const Shape5 expect{s.n, K.in_channels, 2 * s.d, 2 * s.h, 2 * s.w};
  if (!(grad_out.shape() == expect)) {
    throw ShapeError("transpose_conv3d_backward: grad " + grad_out.shape().str() + ", expected " + expect.str());
  }
  TransposeConvGrads<Scalar> grads{Tensor<Scalar>(s), DenseKernel3D<Scalar>(K.out_channels, K.in_channels, 2, false),
                                   with_bias ? Vector<Scalar>::Zero(K.in_channels) : Vector<Scalar>()};
  const detail::ConvGeometry g{2, 2, 0, K.in_channels, expect.d, expect.h, expect.w, s.d, s.h, s.w};
  const Eigen::Index N = Eigen::Index(s.spatial());
  RowMatrix<Scalar> col(Eigen::Index(K.in_channels) * 8, N);
  auto gW = grads.kernel.matrix();
  for (int n = 0; n < s.n; ++n) {
    Eigen::Map<const RowMatrix<Scalar>> Y(y.sample(n), s.c, N);
    Eigen::Map<RowMatrix<Scalar>> GY(grads.input.sample(n), s.c, N);
    detail::im2col(grad_out.sample(n), g, 0, s.d, col.data());
    GY.noalias() = K.matrix() * col;
    gW.noalias() += Y * col.transpose();
    if (with_bias) {
      Eigen::Map<const RowMatrix<Scalar>> G(grad_out.sample(n), K.in_channels, Eigen::Index(expect.spatial()));
      grads.bias += G.rowwise().sum();
    }
  }
  return grads;
}

}  // namespace deepbv
