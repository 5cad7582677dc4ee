#include "dsm/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include "dsm/nn.hpp"

namespace dsm {

void UncertaintyNet::init(ParamSet& params, Rng& rng) {
  w1 = &params.add("uncertainty.w1", {kHidden, 1, 3, 3});
  b1 = &params.add("uncertainty.b1", {kHidden});
  w2 = &params.add("uncertainty.w2", {1, kHidden, 3, 3});
  b2 = &params.add("uncertainty.b2", {1});
  fill_he_uniform(*w1, 1 * 3 * 3, rng);
  fill_he_uniform(*w2, kHidden * 3 * 3, rng);
}

void UncertaintyNet::bind(ParamSet& params) {
  w1 = &params.require("uncertainty.w1");
  b1 = &params.require("uncertainty.b1");
  w2 = &params.require("uncertainty.w2");
  b2 = &params.require("uncertainty.b2");
}

namespace {

void check_net(const UncertaintyNet& net) {
  if (!net.w1 || !net.b1 || !net.w2 || !net.b2)
    throw ArgumentError("uncertainty net is not bound to parameters");
  for (const Tensor* t : {net.w1, net.b1, net.w2, net.b2})
    for (double v : t->value)
      if (!std::isfinite(v)) throw ValidationError("uncertainty net has non-finite parameters");
}

}  // namespace

LogScaleMap matchability_to_logscale(const MatchabilityMap& m, const UncertaintyNet& net,
                                     UncertaintyTrace* trace) {
  if (m.empty()) throw ArgumentError("empty matchability map");
  require_finite(m, "matchability map");
  check_net(net);

  const int h = m.h, w = m.w;
  const std::size_t plane = m.size();
  std::vector<double> h1_pre(UncertaintyNet::kHidden * plane);
  std::vector<double> h1(h1_pre.size());
  std::vector<double> out_pre(plane);

  conv2d(m.data.data(), 1, h, w, net.w1->value.data(), net.b1->value.data(),
         UncertaintyNet::kHidden, 3, h1_pre.data());
  relu(h1_pre.data(), h1.data(), h1_pre.size());
  conv2d(h1.data(), UncertaintyNet::kHidden, h, w, net.w2->value.data(), net.b2->value.data(), 1,
         3, out_pre.data());

  LogScaleMap out(h, w, MapRole::LogScale);
  for (std::size_t i = 0; i < plane; ++i)
    out.data[i] = std::clamp(out_pre[i], UncertaintyNet::kClampLo, UncertaintyNet::kClampHi);

  if (trace) {
    trace->h = h;
    trace->w = w;
    trace->input = m.data;
    trace->h1_pre = std::move(h1_pre);
    trace->h1 = std::move(h1);
    trace->out_pre = std::move(out_pre);
  }
  return out;
}

ScalarMap uncertainty_backward(const UncertaintyTrace& trace, const UncertaintyNet& net,
                               const ScalarMap& upstream) {
  if (upstream.h != trace.h || upstream.w != trace.w)
    throw ArgumentError("uncertainty_backward shape mismatch");
  check_net(net);

  const int h = trace.h, w = trace.w;
  const std::size_t plane = std::size_t(h) * w;

  std::vector<double> g_out(plane, 0.0);
  for (std::size_t i = 0; i < plane; ++i) {
    const double pre = trace.out_pre[i];
    if (pre > UncertaintyNet::kClampLo && pre < UncertaintyNet::kClampHi)
      g_out[i] = upstream.data[i];
  }

  std::vector<double> g_h1(UncertaintyNet::kHidden * plane, 0.0);
  conv2d_backward(trace.h1.data(), UncertaintyNet::kHidden, h, w, net.w2->value.data(), 1, 3,
                  g_out.data(), g_h1.data(), net.w2->grad.data(), net.b2->grad.data());

  std::vector<double> g_h1_pre(g_h1.size(), 0.0);
  relu_backward(trace.h1_pre.data(), g_h1.data(), g_h1_pre.data(), g_h1.size());

  ScalarMap grad_m(h, w, MapRole::Matchability);
  conv2d_backward(trace.input.data(), 1, h, w, net.w1->value.data(), UncertaintyNet::kHidden, 3,
                  g_h1_pre.data(), grad_m.data.data(), net.w1->grad.data(), net.b1->grad.data());
  return grad_m;
}

WeightMap attenuation_weights(const LogScaleMap& logscale) {
  require_finite(logscale, "log-scale map");
  WeightMap out(logscale.h, logscale.w, MapRole::Weight);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::exp(-logscale.data[i]);
  return out;
}

MaskMap matchable_mask(const LogScaleMap& logscale) {
  require_finite(logscale, "log-scale map");
  MaskMap out(logscale.h, logscale.w, MapRole::Mask);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = logscale.data[i] < 0.0 ? 1.0 : 0.0;
  return out;
}

}  // namespace dsm
