#pragma once

#include <cstddef>

#include "dsm/volume.hpp"

namespace dsm {

struct LossBreakdown {
  double l1_init = 0.0;
  double joint = 0.0;
  double l1_refined = 0.0;
  double total = 0.0;
  std::size_t valid_pixel_count = 0;
};

// 1 where the ground truth is finite and in [0, d_max], else 0.
MaskMap valid_mask(const DisparityMap& dgt, double d_max = 192.0);

// Mean absolute error over mask==1 pixels. Throws DegenerateInputError when
// no pixel is valid.
double l1_loss(const DisparityMap& d, const DisparityMap& dgt, const MaskMap& mask);

// Gradient wrt the prediction; sign(0) := 0.
ScalarMap l1_loss_backward(const DisparityMap& d, const DisparityMap& dgt, const MaskMap& mask,
                           double upstream);

// Mean over valid pixels of |D - Dgt| * exp(-B') + B'. With B' identically
// zero this reduces, bit for bit, to l1_loss.
double joint_loss(const DisparityMap& d, const DisparityMap& dgt, const LogScaleMap& logscale,
                  const MaskMap& mask);

struct JointLossGrads {
  ScalarMap d_disparity;
  ScalarMap d_logscale;
};

JointLossGrads joint_loss_backward(const DisparityMap& d, const DisparityMap& dgt,
                                   const LogScaleMap& logscale, const MaskMap& mask,
                                   double upstream);

double total_loss(double l1_init, double joint, double l1_refined, double lambda_init,
                  double lambda_joint, double lambda_refined);

}  // namespace dsm
