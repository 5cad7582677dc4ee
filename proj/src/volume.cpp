#include "dsm/volume.hpp"

#include <cmath>
#include <string>

namespace dsm {

void require_finite(const Volume& v, const char* what) {
  for (double x : v.data)
    if (!std::isfinite(x)) throw ValidationError(std::string(what) + " contains non-finite values");
}

void require_finite(const ScalarMap& m, const char* what) {
  for (double x : m.data)
    if (!std::isfinite(x)) throw ValidationError(std::string(what) + " contains non-finite values");
}

ProbabilityVolume softmax_over_disparity(const CostVolume& cost, double temperature) {
  if (temperature <= 0.0) throw ArgumentError("softmax temperature must be positive");
  if (cost.d < 1 || cost.h < 1 || cost.w < 1) throw ArgumentError("empty cost volume");
  require_finite(cost, "cost volume");

  ProbabilityVolume p(cost.d, cost.h, cost.w);
  const std::size_t plane = cost.plane();
  for (int y = 0; y < cost.h; ++y) {
    for (int x = 0; x < cost.w; ++x) {
      const std::size_t px = std::size_t(y) * cost.w + x;
      double cmin = cost.data[px];
      for (int dd = 1; dd < cost.d; ++dd) cmin = std::min(cmin, cost.data[dd * plane + px]);
      double sum = 0.0;
      for (int dd = 0; dd < cost.d; ++dd) {
        const double e = std::exp(-(cost.data[dd * plane + px] - cmin) / temperature);
        p.data[dd * plane + px] = e;
        sum += e;
      }
      for (int dd = 0; dd < cost.d; ++dd) p.data[dd * plane + px] /= sum;
    }
  }
  return p;
}

Volume softmax_backward(const ProbabilityVolume& p, const Volume& upstream, double temperature) {
  if (temperature <= 0.0) throw ArgumentError("softmax temperature must be positive");
  if (!p.same_shape(upstream)) throw ArgumentError("softmax_backward shape mismatch");

  Volume grad(p.d, p.h, p.w);
  const std::size_t plane = p.plane();
  for (int y = 0; y < p.h; ++y) {
    for (int x = 0; x < p.w; ++x) {
      const std::size_t px = std::size_t(y) * p.w + x;
      double dot = 0.0;
      for (int dd = 0; dd < p.d; ++dd) dot += upstream.data[dd * plane + px] * p.data[dd * plane + px];
      for (int dd = 0; dd < p.d; ++dd) {
        const std::size_t i = dd * plane + px;
        grad.data[i] = -p.data[i] * (upstream.data[i] - dot) / temperature;
      }
    }
  }
  return grad;
}

namespace {

// Half-pixel source coordinate for output index i at integer scale f, clamped
// to the valid range and split into a base index plus fraction.
struct Tap {
  int i0, i1;
  double t;
};

Tap tap_for(int i, int factor, int in_size) {
  double s = (i + 0.5) / factor - 0.5;
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

Volume upsample_core(const Volume& vol, int factor) {
  Volume out(vol.d, vol.h * factor, vol.w * factor);
  const std::size_t iplane = vol.plane();
  const std::size_t oplane = out.plane();
  for (int y = 0; y < out.h; ++y) {
    const Tap ty = tap_for(y, factor, vol.h);
    for (int x = 0; x < out.w; ++x) {
      const Tap tx = tap_for(x, factor, vol.w);
      for (int dd = 0; dd < vol.d; ++dd) {
        const double* in = vol.data.data() + dd * iplane;
        const double v00 = in[std::size_t(ty.i0) * vol.w + tx.i0];
        const double v01 = in[std::size_t(ty.i0) * vol.w + tx.i1];
        const double v10 = in[std::size_t(ty.i1) * vol.w + tx.i0];
        const double v11 = in[std::size_t(ty.i1) * vol.w + tx.i1];
        // lerp written as base + t*delta so constant inputs reproduce exactly
        const double top = v00 + tx.t * (v01 - v00);
        const double bot = v10 + tx.t * (v11 - v10);
        out.data[dd * oplane + std::size_t(y) * out.w + x] = top + ty.t * (bot - top);
      }
    }
  }
  return out;
}

void check_upsample_args(const Volume& vol, int factor) {
  if (factor < 1) throw ArgumentError("upsample factor must be >= 1");
  if (vol.d < 1 || vol.h < 1 || vol.w < 1) throw ArgumentError("empty volume");
}

}  // namespace

CostVolume upsample_trilinear(const CostVolume& vol, int factor) {
  check_upsample_args(vol, factor);
  if (factor == 1) return vol;
  CostVolume out(0, 0, 0);
  static_cast<Volume&>(out) = upsample_core(vol, factor);
  return out;
}

ProbabilityVolume upsample_trilinear(const ProbabilityVolume& vol, int factor) {
  check_upsample_args(vol, factor);
  if (factor == 1) return vol;
  ProbabilityVolume out(0, 0, 0);
  static_cast<Volume&>(out) = upsample_core(vol, factor);
  const std::size_t plane = out.plane();
  for (std::size_t px = 0; px < plane; ++px) {
    double sum = 0.0;
    for (int dd = 0; dd < out.d; ++dd) sum += out.data[dd * plane + px];
    if (sum <= 0.0) throw ValidationError("probability upsample produced a non-positive column");
    for (int dd = 0; dd < out.d; ++dd) out.data[dd * plane + px] /= sum;
  }
  return out;
}

Volume upsample_trilinear_backward(const Volume& upstream, int in_h, int in_w, int factor) {
  if (factor < 1) throw ArgumentError("upsample factor must be >= 1");
  if (in_h < 1 || in_w < 1) throw ArgumentError("empty volume");
  if (upstream.h != in_h * factor || upstream.w != in_w * factor)
    throw ArgumentError("upsample_trilinear_backward shape mismatch");
  if (factor == 1) return upstream;

  Volume grad(upstream.d, in_h, in_w);
  const std::size_t iplane = grad.plane();
  const std::size_t oplane = upstream.plane();
  for (int y = 0; y < upstream.h; ++y) {
    const Tap ty = tap_for(y, factor, in_h);
    for (int x = 0; x < upstream.w; ++x) {
      const Tap tx = tap_for(x, factor, in_w);
      for (int dd = 0; dd < upstream.d; ++dd) {
        const double g = upstream.data[dd * oplane + std::size_t(y) * upstream.w + x];
        double* out = grad.data.data() + dd * iplane;
        out[std::size_t(ty.i0) * in_w + tx.i0] += g * (1.0 - ty.t) * (1.0 - tx.t);
        out[std::size_t(ty.i0) * in_w + tx.i1] += g * (1.0 - ty.t) * tx.t;
        out[std::size_t(ty.i1) * in_w + tx.i0] += g * ty.t * (1.0 - tx.t);
        out[std::size_t(ty.i1) * in_w + tx.i1] += g * ty.t * tx.t;
      }
    }
  }
  return grad;
}

}  // namespace dsm
