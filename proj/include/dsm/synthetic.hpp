#pragma once

#include <cstdint>

#include "dsm/volume.hpp"

namespace dsm {

struct SyntheticConfig {
  int h = 64, w = 128;
  int max_disp = 12;
  double textureless_fraction = 0.2;
  // When >= 0 the whole field takes this value (plain shifted pair).
  double constant_disparity = -1.0;

  void validate() const;
};

struct SyntheticSample {
  ScalarMap left, right;
  DisparityMap dgt;
  MaskMap occlusion;    // pixels visible only in the left view
  MaskMap textureless;  // injected photometrically flat regions (left view)
  std::uint64_t seed = 0;
};

// Random-dot stereo pair: the right view is uniform noise, the ground truth
// combines a smooth ramp with constant-disparity rectangles, and the left
// view is the right view inversely warped by the ground truth,
// left(x,y) = right(x - Dgt(x,y), y), with fresh noise where the source
// column falls off-frame. Textureless rectangles are flattened in the right
// view before warping so they stay geometrically consistent. The occlusion
// mask marks off-frame pixels and stereo ordering violations.
SyntheticSample gen_synthetic_pair(std::uint64_t seed, const SyntheticConfig& cfg = {});

}  // namespace dsm
