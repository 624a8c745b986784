#pragma once

#include "deepbv/conv.hpp"
#include "deepbv/volume.hpp"

#include <random>

namespace deepbv::testing {

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape5 s, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Tensor<Scalar> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = Scalar(normal(rng));
  return t;
}

template <typename Scalar>
void randomize(Vector<Scalar>& v, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = Scalar(normal(rng));
}

/// Direct six-loop correlation with zero padding, accumulated in double.
template <typename Scalar>
Tensor<Scalar> naive_conv(const Tensor<Scalar>& x, const DenseKernel3D<Scalar>& K, int stride, Padding padding) {
  const Shape5& s = x.shape();
  const int p = padding == Padding::Same ? (K.k - 1) / 2 : 0;
  const int od = (s.d + 2 * p - K.k) / stride + 1;
  const int oh = (s.h + 2 * p - K.k) / stride + 1;
  const int ow = (s.w + 2 * p - K.k) / stride + 1;
  Tensor<Scalar> out({s.n, K.out_channels, od, oh, ow});
  for (int n = 0; n < s.n; ++n)
    for (int co = 0; co < K.out_channels; ++co)
      for (int z = 0; z < od; ++z)
        for (int y = 0; y < oh; ++y)
          for (int xo = 0; xo < ow; ++xo) {
            double acc = K.has_bias() ? double(K.bias[co]) : 0.0;
            for (int ci = 0; ci < s.c; ++ci)
              for (int a = 0; a < K.k; ++a)
                for (int b = 0; b < K.k; ++b)
                  for (int c = 0; c < K.k; ++c) {
                    const int iz = z * stride + a - p, iy = y * stride + b - p, ix = xo * stride + c - p;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= s.d || iy >= s.h || ix >= s.w) continue;
                    acc += double(K.at(co, ci, a, b, c)) * double(x(n, ci, iz, iy, ix));
                  }
            out(n, co, z, y, xo) = Scalar(acc);
          }
  return out;
}

inline Mask random_mask(std::array<int, 3> dims, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution on(density);
  Mask m(dims);
  for (auto& v : m.data) v = on(rng) ? 1 : 0;
  return m;
}

}  // namespace deepbv::testing
