#pragma once

#include <vector>

#include "dsm/params.hpp"

namespace dsm {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  long t = 0;
  std::vector<std::vector<double>> m;  // first moments, parallel to tensor order
  std::vector<std::vector<double>> v;  // second moments

  void init(const ParamSet& params);
  bool initialized() const { return !m.empty(); }
};

// One bias-corrected Adam update from the gradients stored on the set.
// Moments are lazily initialized on the first call.
void adam_step(ParamSet& params, AdamState& state);

}  // namespace dsm
