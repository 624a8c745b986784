#include "deepbv/detail/conv_fast.hpp"

#include "deepbv/parallel.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

namespace deepbv::detail {
namespace {

// GCC/Clang vector extension; lowered to whatever SIMD width the target has.
typedef float v16 __attribute__((vector_size(64)));
typedef float v16u __attribute__((vector_size(64), aligned(4)));

constexpr int kLanes = 16;
constexpr int kBlock = 4;  // output channels per register block

inline v16 load(const float* p) { return *reinterpret_cast<const v16u*>(p); }
inline void store(float* p, v16 v) { *reinterpret_cast<v16u*>(p) = v; }

struct Padded {
  std::vector<float> data;
  int dp, hp, wp;
  std::size_t channel_stride() const { return std::size_t(dp) * hp * wp; }
};

// Zero border of `pad` voxels plus slack so that full-vector row loads near
// the end never leave the buffer.
Padded pad_input(const float* x, int c, int d, int h, int w, int pad) {
  Padded p{{}, d + 2 * pad, h + 2 * pad, w + 2 * pad};
  p.data.assign(std::size_t(c) * p.channel_stride() + 4 * kLanes, 0.0f);
  for (int ci = 0; ci < c; ++ci)
    for (int z = 0; z < d; ++z)
      for (int y = 0; y < h; ++y) {
        const float* src = x + ((std::size_t(ci) * d + z) * h + y) * w;
        float* dst = p.data.data() + ci * p.channel_stride() + (std::size_t(z + pad) * p.hp + y + pad) * p.wp + pad;
        std::copy(src, src + w, dst);
      }
  return p;
}

template <int K, int NV>
void row_kernel(const float* in, const float* wt, int cin, std::size_t cstride, int hp, int wp, float* acc_out,
                int acc_stride) {
  v16 acc[kBlock][NV];
  for (int c = 0; c < kBlock; ++c)
    for (int v = 0; v < NV; ++v) acc[c][v] = v16{};
  for (int ci = 0; ci < cin; ++ci)
    for (int kz = 0; kz < K; ++kz)
      for (int ky = 0; ky < K; ++ky) {
        const float* row = in + ci * cstride + (std::size_t(kz) * hp + ky) * wp;
        const float* wr = wt + ((std::size_t(ci) * K + kz) * K + ky) * K * kBlock;
        for (int kx = 0; kx < K; ++kx) {
          v16 iv[NV];
          for (int v = 0; v < NV; ++v) iv[v] = load(row + kx + kLanes * v);
          for (int c = 0; c < kBlock; ++c) {
            const float wv = wr[kx * kBlock + c];
            for (int v = 0; v < NV; ++v) acc[c][v] += wv * iv[v];
          }
        }
      }
  for (int c = 0; c < kBlock; ++c)
    for (int v = 0; v < NV; ++v) store(acc_out + c * acc_stride + kLanes * v, acc[c][v]);
}

template <int K>
void conv_same_impl(const float* x, int cin, int d, int h, int w, const float* weights, const float* bias, int cout,
                    float* out) {
  constexpr int pad = K / 2;
  constexpr int taps = K * K * K;
  const Padded p = pad_input(x, cin, d, h, w, pad);
  const int wr = (w + kLanes - 1) / kLanes * kLanes;
  const int blocks = (cout + kBlock - 1) / kBlock;

  // [block][ci][kz][ky][kx][kBlock], zero for channels past cout.
  std::vector<float> wt(std::size_t(blocks) * cin * taps * kBlock, 0.0f);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int t = 0; t < taps; ++t)
        wt[((std::size_t(co / kBlock) * cin + ci) * taps + t) * kBlock + co % kBlock] =
            weights[(std::size_t(co) * cin + ci) * taps + t];

  const std::size_t spatial = std::size_t(d) * h * w;
  parallel_for(0, std::ptrdiff_t(blocks) * d, [&](std::ptrdiff_t task) {
    const int b = int(task / d);
    const int z = int(task % d);
    const float* wb = wt.data() + std::size_t(b) * cin * taps * kBlock;
    std::vector<float> acc(std::size_t(kBlock) * wr);
    for (int y = 0; y < h; ++y) {
      const float* base = p.data.data() + (std::size_t(z) * p.hp + y) * p.wp;
      int x0 = 0;
      for (; x0 + 3 * kLanes <= wr; x0 += 3 * kLanes)
        row_kernel<K, 3>(base + x0, wb, cin, p.channel_stride(), p.hp, p.wp, acc.data() + x0, wr);
      for (; x0 + 2 * kLanes <= wr; x0 += 2 * kLanes)
        row_kernel<K, 2>(base + x0, wb, cin, p.channel_stride(), p.hp, p.wp, acc.data() + x0, wr);
      for (; x0 < wr; x0 += kLanes)
        row_kernel<K, 1>(base + x0, wb, cin, p.channel_stride(), p.hp, p.wp, acc.data() + x0, wr);
      for (int c = 0; c < kBlock; ++c) {
        const int co = b * kBlock + c;
        if (co >= cout) break;
        float* dst = out + co * spatial + (std::size_t(z) * h + y) * w;
        const float bv = bias ? bias[co] : 0.0f;
        const float* src = acc.data() + std::size_t(c) * wr;
        for (int x = 0; x < w; ++x) dst[x] = src[x] + bv;
      }
    }
  });
}

template <int K>
void weight_grad_impl(const float* x, int cin, int d, int h, int w, const float* grad_out, int cout, float* dw) {
  constexpr int pad = K / 2;
  constexpr int taps = K * K * K;
  const Padded p = pad_input(x, cin, d, h, w, pad);
  const int wr = (w + kLanes - 1) / kLanes * kLanes;
  const int blocks = (cout + kBlock - 1) / kBlock;
  const int chunks = wr / kLanes;

  // Gradient rows padded to whole vectors with zero tails; missing channels are zero.
  std::vector<float> g(std::size_t(blocks) * kBlock * d * h * wr, 0.0f);
  for (int co = 0; co < cout; ++co)
    for (int z = 0; z < d; ++z)
      for (int y = 0; y < h; ++y) {
        const float* src = grad_out + ((std::size_t(co) * d + z) * h + y) * w;
        std::copy(src, src + w, g.data() + ((std::size_t(co) * d + z) * h + y) * wr);
      }
  const std::size_t gstride = std::size_t(d) * h * wr;

  parallel_for(0, std::ptrdiff_t(blocks) * cin, [&](std::ptrdiff_t task) {
    const int b = int(task / cin);
    const int ci = int(task % cin);
    for (int kz = 0; kz < K; ++kz)
      for (int ky = 0; ky < K; ++ky) {
        v16 acc[kBlock][K];
        for (int c = 0; c < kBlock; ++c)
          for (int kx = 0; kx < K; ++kx) acc[c][kx] = v16{};
        for (int z = 0; z < d; ++z)
          for (int y = 0; y < h; ++y) {
            const float* xrow = p.data.data() + ci * p.channel_stride() + (std::size_t(z + kz) * p.hp + y + ky) * p.wp;
            const float* grow = g.data() + std::size_t(b) * kBlock * gstride + (std::size_t(z) * h + y) * wr;
            for (int ch = 0; ch < chunks; ++ch) {
              v16 gv[kBlock];
              for (int c = 0; c < kBlock; ++c) gv[c] = load(grow + c * gstride + ch * kLanes);
              for (int kx = 0; kx < K; ++kx) {
                const v16 xv = load(xrow + ch * kLanes + kx);
                for (int c = 0; c < kBlock; ++c) acc[c][kx] += gv[c] * xv;
              }
            }
          }
        for (int c = 0; c < kBlock; ++c) {
          const int co = b * kBlock + c;
          if (co >= cout) break;
          float* dst = dw + (std::size_t(co) * cin + ci) * taps + (kz * K + ky) * K;
          for (int kx = 0; kx < K; ++kx) {
            float s = 0.0f;
            for (int l = 0; l < kLanes; ++l) s += acc[c][kx][l];
            dst[kx] += s;
          }
        }
      }
  });
}

}  // namespace

bool fast_conv_eligible(int k, int width) { return (k == 3 || k == 5 || k == 7) && width >= kLanes; }

void conv_same_fast(const float* x, int cin, int d, int h, int w, const float* weights, const float* bias, int cout,
                    int k, float* out) {
  switch (k) {
    case 3: return conv_same_impl<3>(x, cin, d, h, w, weights, bias, cout, out);
    case 5: return conv_same_impl<5>(x, cin, d, h, w, weights, bias, cout, out);
    case 7: return conv_same_impl<7>(x, cin, d, h, w, weights, bias, cout, out);
    default: break;
  }
}

void conv_same_fast_weight_grad(const float* x, int cin, int d, int h, int w, const float* grad_out, int cout, int k,
                                float* dw) {
  switch (k) {
    case 3: return weight_grad_impl<3>(x, cin, d, h, w, grad_out, cout, dw);
    case 5: return weight_grad_impl<5>(x, cin, d, h, w, grad_out, cout, dw);
    case 7: return weight_grad_impl<7>(x, cin, d, h, w, grad_out, cout, dw);
    default: break;
  }
}

}  // namespace deepbv::detail
