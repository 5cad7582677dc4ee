#include "dsm/losses.hpp"

#include <cmath>

namespace dsm {

namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

std::size_t count_valid(const MaskMap& mask) {
  std::size_t n = 0;
  for (double v : mask.data)
    if (v != 0.0) ++n;
  if (n == 0) throw DegenerateInputError("no valid pixels under mask");
  return n;
}

void check_shapes(const ScalarMap& a, const ScalarMap& b, const char* what) {
  if (!a.same_shape(b)) throw ArgumentError(std::string(what) + " shape mismatch");
}

}  // namespace

MaskMap valid_mask(const DisparityMap& dgt, double d_max) {
  MaskMap mask(dgt.h, dgt.w, MapRole::Mask);
  for (std::size_t i = 0; i < dgt.size(); ++i) {
    const double v = dgt.data[i];
    mask.data[i] = (std::isfinite(v) && v >= 0.0 && v <= d_max) ? 1.0 : 0.0;
  }
  return mask;
}

double l1_loss(const DisparityMap& d, const DisparityMap& dgt, const MaskMap& mask) {
  check_shapes(d, dgt, "l1_loss");
  check_shapes(d, mask, "l1_loss");
  require_finite(d, "prediction");
  const std::size_t n = count_valid(mask);
  double sum = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (mask.data[i] != 0.0) sum += std::abs(d.data[i] - dgt.data[i]);
  return sum / double(n);
}

ScalarMap l1_loss_backward(const DisparityMap& d, const DisparityMap& dgt, const MaskMap& mask,
                           double upstream) {
  check_shapes(d, dgt, "l1_loss_backward");
  check_shapes(d, mask, "l1_loss_backward");
  const std::size_t n = count_valid(mask);
  ScalarMap grad(d.h, d.w);
  const double scale = upstream / double(n);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (mask.data[i] != 0.0) grad.data[i] = sign0(d.data[i] - dgt.data[i]) * scale;
  return grad;
}

double joint_loss(const DisparityMap& d, const DisparityMap& dgt, const LogScaleMap& logscale,
                  const MaskMap& mask) {
  check_shapes(d, dgt, "joint_loss");
  check_shapes(d, logscale, "joint_loss");
  check_shapes(d, mask, "joint_loss");
  require_finite(d, "prediction");
  require_finite(logscale, "log-scale map");
  const std::size_t n = count_valid(mask);
  double sum = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (mask.data[i] != 0.0) {
      const double b = logscale.data[i];
      sum += std::abs(d.data[i] - dgt.data[i]) * std::exp(-b) + b;
    }
  return sum / double(n);
}

JointLossGrads joint_loss_backward(const DisparityMap& d, const DisparityMap& dgt,
                                   const LogScaleMap& logscale, const MaskMap& mask,
                                   double upstream) {
  check_shapes(d, dgt, "joint_loss_backward");
  check_shapes(d, logscale, "joint_loss_backward");
  check_shapes(d, mask, "joint_loss_backward");
  const std::size_t n = count_valid(mask);
  JointLossGrads g;
  g.d_disparity = ScalarMap(d.h, d.w);
  g.d_logscale = ScalarMap(d.h, d.w);
  const double scale = upstream / double(n);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (mask.data[i] != 0.0) {
      const double r = d.data[i] - dgt.data[i];
      const double att = std::exp(-logscale.data[i]);
      g.d_disparity.data[i] = sign0(r) * att * scale;
      g.d_logscale.data[i] = (1.0 - std::abs(r) * att) * scale;
    }
  return g;
}

double total_loss(double l1_init, double joint, double l1_refined, double lambda_init,
                  double lambda_joint, double lambda_refined) {
  return lambda_init * l1_init + lambda_joint * joint + lambda_refined * l1_refined;
}

}  // namespace dsm
