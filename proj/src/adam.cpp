#include "dsm/adam.hpp"

#include <cmath>

namespace dsm {

void AdamState::init(const ParamSet& params) {
  m.assign(params.tensor_count(), {});
  v.assign(params.tensor_count(), {});
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    m[i].assign(params.tensor(i).size(), 0.0);
    v[i].assign(params.tensor(i).size(), 0.0);
  }
  t = 0;
}

void adam_step(ParamSet& params, AdamState& state) {
  if (!state.initialized()) state.init(params);
  if (state.m.size() != params.tensor_count())
    throw ArgumentError("adam state does not match the parameter set");
  if (!params.grads_finite()) throw ValidationError("non-finite gradients in adam_step");

  const AdamConfig& c = state.cfg;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, double(state.t));
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    Tensor& p = params.tensor(i);
    if (state.m[i].size() != p.size())
      throw ArgumentError("adam state does not match the parameter set");
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = p.grad[j];
      state.m[i][j] = c.beta1 * state.m[i][j] + (1.0 - c.beta1) * g;
      state.v[i][j] = c.beta2 * state.v[i][j] + (1.0 - c.beta2) * g * g;
      const double mhat = state.m[i][j] / bc1;
      const double vhat = state.v[i][j] / bc2;
      p.value[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace dsm
