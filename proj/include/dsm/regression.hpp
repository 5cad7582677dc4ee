#pragma once

#include "dsm/volume.hpp"

namespace dsm {

// D(x,y) = sum_d d * P(x,y,d). Each column of P must sum to 1 within 1e-4.
DisparityMap soft_argmin(const ProbabilityVolume& p);

// d(loss)/dP for upstream = d(loss)/dD; grad(d,y,x) = upstream(y,x) * d.
Volume soft_argmin_backward(const ProbabilityVolume& p, const ScalarMap& upstream);

// Shannon entropy per pixel: M(x,y) = -sum_d P log P, with 0 log 0 := 0.
MatchabilityMap entropy_matchability(const ProbabilityVolume& p);

// d(loss)/dP with dM/dP = -(log max(P, 1e-12) + 1).
Volume entropy_backward(const ProbabilityVolume& p, const ScalarMap& upstream);

}  // namespace dsm
