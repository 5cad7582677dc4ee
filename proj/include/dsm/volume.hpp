#pragma once

#include <cstddef>
#include <vector>

#include "dsm/common.hpp"

namespace dsm {

enum class MapRole { Generic, Disparity, Matchability, LogScale, Weight, Mask, Luminance };

// Dense H x W scalar field, row-major.
struct ScalarMap {
  int h = 0, w = 0;
  MapRole role = MapRole::Generic;
  std::vector<double> data;

  ScalarMap() = default;
  ScalarMap(int h_, int w_, MapRole role_ = MapRole::Generic, double fill = 0.0)
      : h(h_), w(w_), role(role_), data(std::size_t(h_) * std::size_t(w_), fill) {}

  double& at(int y, int x) { return data[std::size_t(y) * w + x]; }
  double at(int y, int x) const { return data[std::size_t(y) * w + x]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const ScalarMap& o) const { return h == o.h && w == o.w; }
  bool empty() const { return data.empty(); }
};

using DisparityMap = ScalarMap;
using MatchabilityMap = ScalarMap;
using LogScaleMap = ScalarMap;
using WeightMap = ScalarMap;
using MaskMap = ScalarMap;

// Dense (d, y, x) row-major volume; per-disparity planes are contiguous.
struct Volume {
  int d = 0, h = 0, w = 0;
  std::vector<double> data;

  Volume() = default;
  Volume(int d_, int h_, int w_, double fill = 0.0)
      : d(d_), h(h_), w(w_), data(std::size_t(d_) * h_ * w_, fill) {}

  std::size_t plane() const { return std::size_t(h) * w; }
  double& at(int dd, int y, int x) { return data[(std::size_t(dd) * h + y) * w + x]; }
  double at(int dd, int y, int x) const { return data[(std::size_t(dd) * h + y) * w + x]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Volume& o) const { return d == o.d && h == o.h && w == o.w; }
};

struct CostVolume : Volume {
  using Volume::Volume;
};

// Per-pixel normalized over the disparity axis.
struct ProbabilityVolume : Volume {
  using Volume::Volume;
};

void require_finite(const Volume& v, const char* what);
void require_finite(const ScalarMap& m, const char* what);

// P(x,y,d) = exp(-c(x,y,d)/tau) / sum_d' exp(-c(x,y,d')/tau), computed with
// max-subtraction. Lower cost means higher probability.
ProbabilityVolume softmax_over_disparity(const CostVolume& cost, double temperature = 1.0);

// d(loss)/d(cost) given p = softmax_over_disparity(cost) and d(loss)/dP.
Volume softmax_backward(const ProbabilityVolume& p, const Volume& upstream,
                        double temperature = 1.0);

// Bilinear interpolation in (y, x); the disparity axis is untouched.
// Probability volumes are re-normalized over d after interpolation.
CostVolume upsample_trilinear(const CostVolume& vol, int factor);
ProbabilityVolume upsample_trilinear(const ProbabilityVolume& vol, int factor);

// Scatter adjoint of the cost-volume upsampling path.
Volume upsample_trilinear_backward(const Volume& upstream, int in_h, int in_w, int factor);

}  // namespace dsm
