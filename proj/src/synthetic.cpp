#include "dsm/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "dsm/common.hpp"

namespace dsm {

void SyntheticConfig::validate() const {
  if (h < 8 || w < 8) throw ArgumentError("synthetic: image too small");
  if (max_disp < 1) throw ArgumentError("synthetic: max_disp must be >= 1");
  if (max_disp >= w / 4) throw ArgumentError("synthetic: max_disp must be < W/4");
  if (textureless_fraction < 0.0 || textureless_fraction >= 1.0)
    throw ArgumentError("synthetic: textureless_fraction must be in [0, 1)");
  if (constant_disparity > max_disp)
    throw ArgumentError("synthetic: constant_disparity exceeds max_disp");
}

namespace {

struct Rect {
  int x0, y0, x1, y1;  // inclusive
};

Rect random_rect(Rng& rng, int h, int w) {
  const int rw = rng.uniform_int(w / 8, w / 4);
  const int rh = rng.uniform_int(h / 8, h / 4);
  const int x0 = rng.uniform_int(0, w - rw);
  const int y0 = rng.uniform_int(0, h - rh);
  return {x0, y0, x0 + rw - 1, y0 + rh - 1};
}

}  // namespace

SyntheticSample gen_synthetic_pair(std::uint64_t seed, const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  const int h = cfg.h, w = cfg.w;

  SyntheticSample s;
  s.seed = seed;
  s.right = ScalarMap(h, w, MapRole::Luminance);
  for (double& v : s.right.data) v = rng.uniform();

  s.dgt = DisparityMap(h, w, MapRole::Disparity);
  if (cfg.constant_disparity >= 0.0) {
    std::fill(s.dgt.data.begin(), s.dgt.data.end(), cfg.constant_disparity);
  } else {
    const double base = rng.uniform(0.2, 0.6) * cfg.max_disp;
    const double bx = rng.uniform(-0.5, 0.5) * cfg.max_disp / w;
    const double by = rng.uniform(-0.5, 0.5) * cfg.max_disp / h;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        s.dgt.at(y, x) = std::clamp(base + bx * x + by * y, 0.0, double(cfg.max_disp));
    const int rects = rng.uniform_int(2, 4);
    for (int i = 0; i < rects; ++i) {
      const Rect r = random_rect(rng, h, w);
      const double dv = rng.uniform(0.3, 1.0) * cfg.max_disp;
      for (int y = r.y0; y <= r.y1; ++y)
        for (int x = r.x0; x <= r.x1; ++x) s.dgt.at(y, x) = dv;
    }
  }

  // Flatten right-view spans so the warped left rectangles come out flat too.
  s.textureless = MaskMap(h, w, MapRole::Mask);
  if (cfg.textureless_fraction > 0.0) {
    const double target = cfg.textureless_fraction * h * w;
    double area = 0.0;
    for (int tries = 0; tries < 64 && area < target; ++tries) {
      const Rect r = random_rect(rng, h, w);
      const double fill = rng.uniform(0.25, 0.75);
      const int sx0 = std::max(0, r.x0 - cfg.max_disp - 1);
      const int sx1 = std::min(w - 1, r.x1 + 1);
      for (int y = r.y0; y <= r.y1; ++y) {
        for (int x = sx0; x <= sx1; ++x) s.right.at(y, x) = fill;
        for (int x = r.x0; x <= r.x1; ++x) {
          if (s.textureless.at(y, x) == 0.0) area += 1.0;
          s.textureless.at(y, x) = 1.0;
        }
      }
    }
  }

  s.left = ScalarMap(h, w, MapRole::Luminance);
  s.occlusion = MaskMap(h, w, MapRole::Mask);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double xs = x - s.dgt.at(y, x);
      if (xs < 0.0) {
        s.left.at(y, x) = rng.uniform();  // off-frame, visible only on the left
        s.occlusion.at(y, x) = 1.0;
        continue;
      }
      const int i0 = int(xs);
      const int i1 = std::min(i0 + 1, w - 1);
      const double t = xs - i0;
      const double v0 = s.right.at(y, i0);
      s.left.at(y, x) = v0 + t * (s.right.at(y, i1) - v0);
    }
  }

  // Ordering violations: a pixel is occluded when some pixel to its right
  // maps at or before its own target column.
  for (int y = 0; y < h; ++y) {
    double suffix_min = double(w);  // min over x' > x of x' - D(x')
    for (int x = w - 1; x >= 0; --x) {
      const double target = x - s.dgt.at(y, x);
      if (suffix_min <= target) s.occlusion.at(y, x) = 1.0;
      suffix_min = std::min(suffix_min, target);
    }
  }
  return s;
}

}  // namespace dsm
