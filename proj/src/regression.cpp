#include "dsm/regression.hpp"

#include <cmath>

namespace dsm {

namespace {

void check_prob(const ProbabilityVolume& p) {
  if (p.d < 1 || p.h < 1 || p.w < 1) throw ArgumentError("empty probability volume");
  require_finite(p, "probability volume");
}

}  // namespace

DisparityMap soft_argmin(const ProbabilityVolume& p) {
  check_prob(p);
  DisparityMap out(p.h, p.w, MapRole::Disparity);
  const std::size_t plane = p.plane();
  for (std::size_t px = 0; px < plane; ++px) {
    double sum = 0.0, acc = 0.0;
    for (int dd = 0; dd < p.d; ++dd) {
      const double pv = p.data[dd * plane + px];
      sum += pv;
      acc += pv * dd;
    }
    // Nano headroom on the bound so probes of exactly boundary magnitude
    // (finite-difference epsilons) don't flip on rounding.
    if (std::abs(sum - 1.0) > 1e-4 * (1.0 + 1e-9))
      throw ValidationError("probability volume column does not sum to 1");
    out.data[px] = acc;
  }
  return out;
}

Volume soft_argmin_backward(const ProbabilityVolume& p, const ScalarMap& upstream) {
  if (p.h != upstream.h || p.w != upstream.w)
    throw ArgumentError("soft_argmin_backward shape mismatch");
  Volume grad(p.d, p.h, p.w);
  const std::size_t plane = p.plane();
  for (int dd = 0; dd < p.d; ++dd)
    for (std::size_t px = 0; px < plane; ++px)
      grad.data[dd * plane + px] = upstream.data[px] * dd;
  return grad;
}

MatchabilityMap entropy_matchability(const ProbabilityVolume& p) {
  check_prob(p);
  MatchabilityMap out(p.h, p.w, MapRole::Matchability);
  const std::size_t plane = p.plane();
  for (std::size_t px = 0; px < plane; ++px) {
    double ent = 0.0;
    for (int dd = 0; dd < p.d; ++dd) {
      const double pv = p.data[dd * plane + px];
      if (pv < 0.0) throw ValidationError("negative probability");
      if (pv > 0.0) ent -= pv * std::log(pv);
    }
    out.data[px] = ent;
  }
  return out;
}

Volume entropy_backward(const ProbabilityVolume& p, const ScalarMap& upstream) {
  if (p.h != upstream.h || p.w != upstream.w)
    throw ArgumentError("entropy_backward shape mismatch");
  Volume grad(p.d, p.h, p.w);
  const std::size_t plane = p.plane();
  for (int dd = 0; dd < p.d; ++dd)
    for (std::size_t px = 0; px < plane; ++px) {
      const double pv = std::max(p.data[dd * plane + px], 1e-12);
      grad.data[dd * plane + px] = -upstream.data[px] * (std::log(pv) + 1.0);
    }
  return grad;
}

}  // namespace dsm
