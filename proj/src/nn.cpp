#include "dsm/nn.hpp"

#include <algorithm>

namespace dsm {

void conv2d(const double* x, int cin, int h, int w, const double* wt, const double* bias, int cout,
            int k, double* y) {
  const int p = k / 2;
  const std::size_t plane = std::size_t(h) * w;
  for (int co = 0; co < cout; ++co) {
    double* yo = y + co * plane;
    std::fill(yo, yo + plane, bias ? bias[co] : 0.0);
    for (int ci = 0; ci < cin; ++ci) {
      const double* xi = x + ci * plane;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wt[((std::size_t(co) * cin + ci) * k + ky) * k + kx];
          if (wv == 0.0) continue;
          const int y0 = std::max(0, p - ky), y1 = std::min(h, h + p - ky);
          const int x0 = std::max(0, p - kx), x1 = std::min(w, w + p - kx);
          const int dx = kx - p;
          for (int oy = y0; oy < y1; ++oy) {
            const double* xr = xi + std::size_t(oy + ky - p) * w;
            double* yr = yo + std::size_t(oy) * w;
            for (int ox = x0; ox < x1; ++ox) yr[ox] += wv * xr[ox + dx];
          }
        }
      }
    }
  }
}

void conv2d_backward(const double* x, int cin, int h, int w, const double* wt, int cout, int k,
                     const double* gy, double* gx, double* gw, double* gb) {
  const int p = k / 2;
  const std::size_t plane = std::size_t(h) * w;
  for (int co = 0; co < cout; ++co) {
    const double* gyo = gy + co * plane;
    if (gb) {
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += gyo[i];
      gb[co] += s;
    }
    for (int ci = 0; ci < cin; ++ci) {
      const double* xi = x + ci * plane;
      double* gxi = gx ? gx + ci * plane : nullptr;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const std::size_t wi = ((std::size_t(co) * cin + ci) * k + ky) * k + kx;
          const double wv = wt[wi];
          const int y0 = std::max(0, p - ky), y1 = std::min(h, h + p - ky);
          const int x0 = std::max(0, p - kx), x1 = std::min(w, w + p - kx);
          const int dx = kx - p;
          double ws = 0.0;
          for (int oy = y0; oy < y1; ++oy) {
            const std::size_t row = std::size_t(oy + ky - p) * w;
            const double* gr = gyo + std::size_t(oy) * w;
            if (gw) {
              const double* xr = xi + row;
              for (int ox = x0; ox < x1; ++ox) ws += gr[ox] * xr[ox + dx];
            }
            if (gxi && wv != 0.0) {
              double* gxr = gxi + row;
              for (int ox = x0; ox < x1; ++ox) gxr[ox + dx] += gr[ox] * wv;
            }
          }
          if (gw) gw[wi] += ws;
        }
      }
    }
  }
}

void conv3d(const double* x, int cin, int d, int h, int w, const double* wt, const double* bias,
            int cout, int k, double* y) {
  const int p = k / 2;
  const std::size_t vol = std::size_t(d) * h * w;
  for (int co = 0; co < cout; ++co) {
    double* yo = y + co * vol;
    std::fill(yo, yo + vol, bias ? bias[co] : 0.0);
    for (int ci = 0; ci < cin; ++ci) {
      const double* xi = x + ci * vol;
      for (int kd = 0; kd < k; ++kd) {
        const int d0 = std::max(0, p - kd), d1 = std::min(d, d + p - kd);
        for (int ky = 0; ky < k; ++ky) {
          const int y0 = std::max(0, p - ky), y1 = std::min(h, h + p - ky);
          for (int kx = 0; kx < k; ++kx) {
            const double wv = wt[(((std::size_t(co) * cin + ci) * k + kd) * k + ky) * k + kx];
            if (wv == 0.0) continue;
            const int x0 = std::max(0, p - kx), x1 = std::min(w, w + p - kx);
            const int dx = kx - p;
            for (int od = d0; od < d1; ++od) {
              for (int oy = y0; oy < y1; ++oy) {
                const double* xr = xi + (std::size_t(od + kd - p) * h + (oy + ky - p)) * w;
                double* yr = yo + (std::size_t(od) * h + oy) * w;
                for (int ox = x0; ox < x1; ++ox) yr[ox] += wv * xr[ox + dx];
              }
            }
          }
        }
      }
    }
  }
}

void conv3d_backward(const double* x, int cin, int d, int h, int w, const double* wt, int cout,
                     int k, const double* gy, double* gx, double* gw, double* gb) {
  const int p = k / 2;
  const std::size_t vol = std::size_t(d) * h * w;
  for (int co = 0; co < cout; ++co) {
    const double* gyo = gy + co * vol;
    if (gb) {
      double s = 0.0;
      for (std::size_t i = 0; i < vol; ++i) s += gyo[i];
      gb[co] += s;
    }
    for (int ci = 0; ci < cin; ++ci) {
      const double* xi = x + ci * vol;
      double* gxi = gx ? gx + ci * vol : nullptr;
      for (int kd = 0; kd < k; ++kd) {
        const int d0 = std::max(0, p - kd), d1 = std::min(d, d + p - kd);
        for (int ky = 0; ky < k; ++ky) {
          const int y0 = std::max(0, p - ky), y1 = std::min(h, h + p - ky);
          for (int kx = 0; kx < k; ++kx) {
            const std::size_t wi = (((std::size_t(co) * cin + ci) * k + kd) * k + ky) * k + kx;
            const double wv = wt[wi];
            const int x0 = std::max(0, p - kx), x1 = std::min(w, w + p - kx);
            const int dx = kx - p;
            double ws = 0.0;
            for (int od = d0; od < d1; ++od) {
              for (int oy = y0; oy < y1; ++oy) {
                const std::size_t row = (std::size_t(od + kd - p) * h + (oy + ky - p)) * w;
                const double* gr = gyo + (std::size_t(od) * h + oy) * w;
                if (gw) {
                  const double* xr = xi + row;
                  for (int ox = x0; ox < x1; ++ox) ws += gr[ox] * xr[ox + dx];
                }
                if (gxi && wv != 0.0) {
                  double* gxr = gxi + row;
                  for (int ox = x0; ox < x1; ++ox) gxr[ox + dx] += gr[ox] * wv;
                }
              }
            }
            if (gw) gw[wi] += ws;
          }
        }
      }
    }
  }
}

void relu(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x_pre, const double* gy, double* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x_pre[i] > 0.0) gx[i] += gy[i];
}

void avgpool2(const double* x, int c, int h, int w, double* y) {
  const int ho = (h + 1) / 2, wo = (w + 1) / 2;
  const std::size_t iplane = std::size_t(h) * w;
  const std::size_t oplane = std::size_t(ho) * wo;
  for (int cc = 0; cc < c; ++cc) {
    const double* xi = x + cc * iplane;
    double* yo = y + cc * oplane;
    for (int oy = 0; oy < ho; ++oy) {
      const int ny = std::min(2, h - 2 * oy);
      for (int ox = 0; ox < wo; ++ox) {
        const int nx = std::min(2, w - 2 * ox);
        double s = 0.0;
        for (int dy = 0; dy < ny; ++dy)
          for (int dx = 0; dx < nx; ++dx) s += xi[std::size_t(2 * oy + dy) * w + 2 * ox + dx];
        yo[std::size_t(oy) * wo + ox] = s / (ny * nx);
      }
    }
  }
}

void avgpool2_backward(int c, int h, int w, const double* gy, double* gx) {
  const int ho = (h + 1) / 2, wo = (w + 1) / 2;
  const std::size_t iplane = std::size_t(h) * w;
  const std::size_t oplane = std::size_t(ho) * wo;
  for (int cc = 0; cc < c; ++cc) {
    const double* gyo = gy + cc * oplane;
    double* gxi = gx + cc * iplane;
    for (int oy = 0; oy < ho; ++oy) {
      const int ny = std::min(2, h - 2 * oy);
      for (int ox = 0; ox < wo; ++ox) {
        const int nx = std::min(2, w - 2 * ox);
        const double g = gyo[std::size_t(oy) * wo + ox] / (ny * nx);
        for (int dy = 0; dy < ny; ++dy)
          for (int dx = 0; dx < nx; ++dx) gxi[std::size_t(2 * oy + dy) * w + 2 * ox + dx] += g;
      }
    }
  }
}

namespace {

struct Tap {
  int i0, i1;
  double t;
};

Tap resize_tap(int i, int out_size, int in_size) {
  double s = (i + 0.5) * double(in_size) / double(out_size) - 0.5;
  if (s < 0.0) s = 0.0;
  const double smax = double(in_size - 1);
  if (s > smax) s = smax;
  Tap t;
  t.i0 = int(s);
  if (t.i0 > in_size - 2) t.i0 = in_size > 1 ? in_size - 2 : 0;
  t.i1 = in_size > 1 ? t.i0 + 1 : 0;
  t.t = s - t.i0;
  return t;
}

}  // namespace

void bilinear_resize(const double* x, int c, int h, int w, int ho, int wo, double* y) {
  const std::size_t iplane = std::size_t(h) * w;
  const std::size_t oplane = std::size_t(ho) * wo;
  for (int oy = 0; oy < ho; ++oy) {
    const Tap ty = resize_tap(oy, ho, h);
    for (int ox = 0; ox < wo; ++ox) {
      const Tap tx = resize_tap(ox, wo, w);
      for (int cc = 0; cc < c; ++cc) {
        const double* xi = x + cc * iplane;
        const double v00 = xi[std::size_t(ty.i0) * w + tx.i0];
        const double v01 = xi[std::size_t(ty.i0) * w + tx.i1];
        const double v10 = xi[std::size_t(ty.i1) * w + tx.i0];
        const double v11 = xi[std::size_t(ty.i1) * w + tx.i1];
        const double top = v00 + tx.t * (v01 - v00);
        const double bot = v10 + tx.t * (v11 - v10);
        y[cc * oplane + std::size_t(oy) * wo + ox] = top + ty.t * (bot - top);
      }
    }
  }
}

void bilinear_resize_backward(const double* gy, int c, int h, int w, int ho, int wo, double* gx) {
  const std::size_t iplane = std::size_t(h) * w;
  const std::size_t oplane = std::size_t(ho) * wo;
  for (int oy = 0; oy < ho; ++oy) {
    const Tap ty = resize_tap(oy, ho, h);
    for (int ox = 0; ox < wo; ++ox) {
      const Tap tx = resize_tap(ox, wo, w);
      for (int cc = 0; cc < c; ++cc) {
        const double g = gy[cc * oplane + std::size_t(oy) * wo + ox];
        double* gxi = gx + cc * iplane;
        gxi[std::size_t(ty.i0) * w + tx.i0] += g * (1.0 - ty.t) * (1.0 - tx.t);
        gxi[std::size_t(ty.i0) * w + tx.i1] += g * (1.0 - ty.t) * tx.t;
        gxi[std::size_t(ty.i1) * w + tx.i0] += g * ty.t * (1.0 - tx.t);
        gxi[std::size_t(ty.i1) * w + tx.i1] += g * ty.t * tx.t;
      }
    }
  }
}

}  // namespace dsm
