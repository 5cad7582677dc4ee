#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dsm {

using VectorFn = std::function<std::vector<double>(const std::vector<double>&)>;
// (inputs, upstream) -> gradient of dot(upstream, f(inputs)) wrt inputs
using VjpFn = std::function<std::vector<double>(const std::vector<double>&,
                                                const std::vector<double>&)>;

// Central finite differences of dot(upstream, f(x)) against the analytic
// vector-Jacobian product, coordinate by coordinate. Returns the max relative
// error with denominator max(|analytic|, |numeric|, 1e-8). When coords is
// given, only those input coordinates are probed.
double grad_check(const VectorFn& f, const VjpFn& vjp, const std::vector<double>& x,
                  const std::vector<double>& upstream, double eps,
                  const std::vector<std::size_t>* coords = nullptr);

struct GradCheckOp {
  std::string name;
  double tolerance;
  int instances;
  std::function<double(std::uint64_t seed)> run;  // max error across instances
};

const std::vector<GradCheckOp>& gradcheck_registry();

}  // namespace dsm
