#pragma once

#include <vector>

#include "dsm/params.hpp"
#include "dsm/volume.hpp"

namespace dsm {

// Small per-pixel head that maps a matchability map to a log-scale map
// B'(x,y): conv3x3 (1->8), relu, conv3x3 (8->1), clamp to [-3, 6].
struct UncertaintyNet {
  static constexpr int kHidden = 8;
  static constexpr double kClampLo = -3.0;
  static constexpr double kClampHi = 6.0;

  Tensor* w1 = nullptr;  // (8,1,3,3)
  Tensor* b1 = nullptr;  // (8)
  Tensor* w2 = nullptr;  // (1,8,3,3)
  Tensor* b2 = nullptr;  // (1)

  void init(ParamSet& params, Rng& rng);
  void bind(ParamSet& params);
};

struct UncertaintyTrace {
  int h = 0, w = 0;
  std::vector<double> input;    // (h,w)
  std::vector<double> h1_pre;   // (8,h,w)
  std::vector<double> h1;       // (8,h,w)
  std::vector<double> out_pre;  // (h,w), before clamping
};

LogScaleMap matchability_to_logscale(const MatchabilityMap& m, const UncertaintyNet& net,
                                     UncertaintyTrace* trace = nullptr);

// Accumulates parameter gradients on the net's tensors and returns the
// gradient with respect to the matchability input.
ScalarMap uncertainty_backward(const UncertaintyTrace& trace, const UncertaintyNet& net,
                               const ScalarMap& upstream);

// exp(-B'), the weight the joint loss applies to the L1 residual.
WeightMap attenuation_weights(const LogScaleMap& logscale);

// 1 where exp(-B') > 1 (i.e. B' < 0), else 0.
MaskMap matchable_mask(const LogScaleMap& logscale);

}  // namespace dsm
