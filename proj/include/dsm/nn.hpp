#pragma once

#include <cstddef>

namespace dsm {

// Low-level dense primitives over raw double buffers. Layouts are row-major:
//   2-d activations  (c, h, w)
//   2-d weights      (cout, cin, k, k)
//   3-d activations  (c, d, h, w)
//   3-d weights      (cout, cin, k, k, k)
// All convolutions are stride 1 with zero padding k/2, so spatial shape is
// preserved. Backward functions accumulate into their gradient buffers;
// nullable pointers skip the corresponding gradient.

void conv2d(const double* x, int cin, int h, int w, const double* wt, const double* bias, int cout,
            int k, double* y);
void conv2d_backward(const double* x, int cin, int h, int w, const double* wt, int cout, int k,
                     const double* gy, double* gx, double* gw, double* gb);

void conv3d(const double* x, int cin, int d, int h, int w, const double* wt, const double* bias,
            int cout, int k, double* y);
void conv3d_backward(const double* x, int cin, int d, int h, int w, const double* wt, int cout,
                     int k, const double* gy, double* gx, double* gw, double* gb);

void relu(const double* x, double* y, std::size_t n);
void relu_backward(const double* x_pre, const double* gy, double* gx, std::size_t n);

// 2x average pooling with ceil-mode output size; edge cells average only the
// taps that exist (inclusive counting).
void avgpool2(const double* x, int c, int h, int w, double* y);
void avgpool2_backward(int c, int h, int w, const double* gy, double* gx);

// Half-pixel bilinear resize (align_corners = false).
void bilinear_resize(const double* x, int c, int h, int w, int ho, int wo, double* y);
void bilinear_resize_backward(const double* gy, int c, int h, int w, int ho, int wo, double* gx);

}  // namespace dsm
