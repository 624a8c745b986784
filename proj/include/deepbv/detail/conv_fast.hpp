#pragma once

namespace deepbv::detail {

/// True when the register-blocked float kernels handle this geometry.
bool fast_conv_eligible(int k, int width);

/// Stride-1 'same' convolution of one sample. x is [cin][d][h][w], weights
/// [cout][cin][k][k][k], out [cout][d][h][w]; bias may be null.
void conv_same_fast(const float* x, int cin, int d, int h, int w, const float* weights, const float* bias, int cout,
                    int k, float* out);

/// Accumulates the weight gradient of conv_same_fast for one sample into dw.
void conv_same_fast_weight_grad(const float* x, int cin, int d, int h, int w, const float* grad_out, int cout, int k,
                                float* dw);

}  // namespace deepbv::detail
