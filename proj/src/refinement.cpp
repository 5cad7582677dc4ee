#include "dsm/refinement.hpp"

#include <algorithm>
#include <cmath>

#include "dsm/nn.hpp"

namespace dsm {

namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// raw output channel -> cell index in the 3x3 kernel, skipping the center
int cell_of_channel(int ch) { return ch < 4 ? ch : ch + 1; }

void check_kernel_net(const KernelNet& net) {
  if (!net.enc1_w || !net.enc1_b || !net.enc2_w || !net.enc2_b || !net.dec1_w || !net.dec1_b ||
      !net.out_w || !net.out_b)
    throw ArgumentError("kernel net is not bound to parameters");
  for (const Tensor* t : {net.enc1_w, net.enc1_b, net.enc2_w, net.enc2_b, net.dec1_w, net.dec1_b,
                          net.out_w, net.out_b})
    for (double v : t->value)
      if (!std::isfinite(v)) throw ValidationError("kernel net has non-finite parameters");
}

}  // namespace

void KernelNet::init(ParamSet& params, Rng& rng) {
  enc1_w = &params.add("kernel.enc1.w", {kEnc1, kIn, 3, 3});
  enc1_b = &params.add("kernel.enc1.b", {kEnc1});
  enc2_w = &params.add("kernel.enc2.w", {kEnc2, kEnc1, 3, 3});
  enc2_b = &params.add("kernel.enc2.b", {kEnc2});
  dec1_w = &params.add("kernel.dec1.w", {kDec1, kEnc2, 3, 3});
  dec1_b = &params.add("kernel.dec1.b", {kDec1});
  out_w = &params.add("kernel.out.w", {kOut, kDec1, 3, 3});
  out_b = &params.add("kernel.out.b", {kOut});
  fill_he_uniform(*enc1_w, kIn * 3 * 3, rng);
  fill_he_uniform(*enc2_w, kEnc1 * 3 * 3, rng);
  fill_he_uniform(*dec1_w, kEnc2 * 3 * 3, rng);
  // out_w stays zero: fresh kernels normalize to the identity tap, so
  // diffusion starts as a no-op instead of scrambling the initial disparities
  // (24 iterations of random signed affinities are violently expansive).
}

void KernelNet::bind(ParamSet& params) {
  enc1_w = &params.require("kernel.enc1.w");
  enc1_b = &params.require("kernel.enc1.b");
  enc2_w = &params.require("kernel.enc2.w");
  enc2_b = &params.require("kernel.enc2.b");
  dec1_w = &params.require("kernel.dec1.w");
  dec1_b = &params.require("kernel.dec1.b");
  out_w = &params.require("kernel.out.w");
  out_b = &params.require("kernel.out.b");
}

KernelMap extract_diffusion_kernels(const DisparityMap& d, const ScalarMap& image,
                                    const MatchabilityMap& m, const KernelNet& net,
                                    KernelNetTrace* trace) {
  if (d.empty()) throw ArgumentError("empty disparity map");
  if (!d.same_shape(image) || !d.same_shape(m))
    throw ArgumentError("kernel net guidance maps must share one shape");
  require_finite(d, "disparity");
  require_finite(image, "image");
  require_finite(m, "matchability");
  check_kernel_net(net);

  const int h = d.h, w = d.w;
  const std::size_t plane = std::size_t(h) * w;
  const int h2 = (h + 1) / 2, w2 = (w + 1) / 2;
  const std::size_t plane2 = std::size_t(h2) * w2;

  std::vector<double> input(3 * plane);
  std::copy(d.data.begin(), d.data.end(), input.begin());
  std::copy(image.data.begin(), image.data.end(), input.begin() + plane);
  if (net.use_matchability) std::copy(m.data.begin(), m.data.end(), input.begin() + 2 * plane);

  std::vector<double> e1_pre(KernelNet::kEnc1 * plane), e1(e1_pre.size());
  std::vector<double> pooled(KernelNet::kEnc1 * plane2);
  std::vector<double> e2_pre(KernelNet::kEnc2 * plane2), e2(e2_pre.size());
  std::vector<double> up(KernelNet::kEnc2 * plane);
  std::vector<double> d1_pre(KernelNet::kDec1 * plane), d1(d1_pre.size());
  std::vector<double> raw(KernelNet::kOut * plane);

  conv2d(input.data(), KernelNet::kIn, h, w, net.enc1_w->value.data(), net.enc1_b->value.data(),
         KernelNet::kEnc1, 3, e1_pre.data());
  relu(e1_pre.data(), e1.data(), e1_pre.size());
  avgpool2(e1.data(), KernelNet::kEnc1, h, w, pooled.data());
  conv2d(pooled.data(), KernelNet::kEnc1, h2, w2, net.enc2_w->value.data(),
         net.enc2_b->value.data(), KernelNet::kEnc2, 3, e2_pre.data());
  relu(e2_pre.data(), e2.data(), e2_pre.size());
  bilinear_resize(e2.data(), KernelNet::kEnc2, h2, w2, h, w, up.data());
  conv2d(up.data(), KernelNet::kEnc2, h, w, net.dec1_w->value.data(), net.dec1_b->value.data(),
         KernelNet::kDec1, 3, d1_pre.data());
  relu(d1_pre.data(), d1.data(), d1_pre.size());
  conv2d(d1.data(), KernelNet::kDec1, h, w, net.out_w->value.data(), net.out_b->value.data(),
         KernelNet::kOut, 3, raw.data());

  KernelMap kernels(h, w, 3);
  for (int ch = 0; ch < KernelNet::kOut; ++ch) {
    const int cell = cell_of_channel(ch);
    const double* src = raw.data() + ch * plane;
    for (std::size_t px = 0; px < plane; ++px) kernels.data[px * 9 + cell] = src[px];
  }

  if (trace) {
    trace->h = h;
    trace->w = w;
    trace->h2 = h2;
    trace->w2 = w2;
    trace->input = std::move(input);
    trace->e1_pre = std::move(e1_pre);
    trace->e1 = std::move(e1);
    trace->pooled = std::move(pooled);
    trace->e2_pre = std::move(e2_pre);
    trace->e2 = std::move(e2);
    trace->up = std::move(up);
    trace->d1_pre = std::move(d1_pre);
    trace->d1 = std::move(d1);
  }
  return kernels;
}

KernelNetInputGrads kernel_net_backward(const KernelNetTrace& trace, const KernelNet& net,
                                        const KernelMap& upstream) {
  if (upstream.h != trace.h || upstream.w != trace.w || upstream.k != 3)
    throw ArgumentError("kernel_net_backward shape mismatch");
  check_kernel_net(net);

  const int h = trace.h, w = trace.w, h2 = trace.h2, w2 = trace.w2;
  const std::size_t plane = std::size_t(h) * w;
  const std::size_t plane2 = std::size_t(h2) * w2;

  std::vector<double> g_raw(KernelNet::kOut * plane, 0.0);
  for (int ch = 0; ch < KernelNet::kOut; ++ch) {
    const int cell = cell_of_channel(ch);
    double* dst = g_raw.data() + ch * plane;
    for (std::size_t px = 0; px < plane; ++px) dst[px] = upstream.data[px * 9 + cell];
  }

  std::vector<double> g_d1(KernelNet::kDec1 * plane, 0.0);
  conv2d_backward(trace.d1.data(), KernelNet::kDec1, h, w, net.out_w->value.data(),
                  KernelNet::kOut, 3, g_raw.data(), g_d1.data(), net.out_w->grad.data(),
                  net.out_b->grad.data());

  std::vector<double> g_d1_pre(g_d1.size(), 0.0);
  relu_backward(trace.d1_pre.data(), g_d1.data(), g_d1_pre.data(), g_d1.size());

  std::vector<double> g_up(KernelNet::kEnc2 * plane, 0.0);
  conv2d_backward(trace.up.data(), KernelNet::kEnc2, h, w, net.dec1_w->value.data(),
                  KernelNet::kDec1, 3, g_d1_pre.data(), g_up.data(), net.dec1_w->grad.data(),
                  net.dec1_b->grad.data());

  std::vector<double> g_e2(KernelNet::kEnc2 * plane2, 0.0);
  bilinear_resize_backward(g_up.data(), KernelNet::kEnc2, h2, w2, h, w, g_e2.data());

  std::vector<double> g_e2_pre(g_e2.size(), 0.0);
  relu_backward(trace.e2_pre.data(), g_e2.data(), g_e2_pre.data(), g_e2.size());

  std::vector<double> g_pooled(KernelNet::kEnc1 * plane2, 0.0);
  conv2d_backward(trace.pooled.data(), KernelNet::kEnc1, h2, w2, net.enc2_w->value.data(),
                  KernelNet::kEnc2, 3, g_e2_pre.data(), g_pooled.data(), net.enc2_w->grad.data(),
                  net.enc2_b->grad.data());

  std::vector<double> g_e1(KernelNet::kEnc1 * plane, 0.0);
  avgpool2_backward(KernelNet::kEnc1, h, w, g_pooled.data(), g_e1.data());

  std::vector<double> g_e1_pre(g_e1.size(), 0.0);
  relu_backward(trace.e1_pre.data(), g_e1.data(), g_e1_pre.data(), g_e1.size());

  std::vector<double> g_input(KernelNet::kIn * plane, 0.0);
  conv2d_backward(trace.input.data(), KernelNet::kIn, h, w, net.enc1_w->value.data(),
                  KernelNet::kEnc1, 3, g_e1_pre.data(), g_input.data(), net.enc1_w->grad.data(),
                  net.enc1_b->grad.data());

  KernelNetInputGrads g;
  g.d = ScalarMap(h, w);
  g.image = ScalarMap(h, w);
  g.m = ScalarMap(h, w);
  std::copy(g_input.begin(), g_input.begin() + plane, g.d.data.begin());
  std::copy(g_input.begin() + plane, g_input.begin() + 2 * plane, g.image.data.begin());
  if (net.use_matchability)
    std::copy(g_input.begin() + 2 * plane, g_input.end(), g.m.data.begin());
  return g;
}

KernelMap normalize_affinities(const KernelMap& raw) {
  if (raw.k != 3) throw ArgumentError("normalize_affinities expects 3x3 kernels");
  for (double v : raw.data)
    if (!std::isfinite(v)) throw ValidationError("raw affinities contain non-finite values");

  const int center = 4;
  KernelMap out(raw.h, raw.w, 3);
  const std::size_t px_count = std::size_t(raw.h) * raw.w;
  for (std::size_t px = 0; px < px_count; ++px) {
    const double* in = raw.data.data() + px * 9;
    double* o = out.data.data() + px * 9;
    double abs_sum = 0.0;
    for (int c = 0; c < 9; ++c)
      if (c != center) abs_sum += std::abs(in[c]);
    const double s = std::max(abs_sum, 1.0);
    double total = 0.0;
    for (int c = 0; c < 9; ++c)
      if (c != center) {
        o[c] = in[c] / s;
        total += o[c];
      }
    o[center] = 1.0 - total;
  }
  return out;
}

KernelMap normalize_affinities_backward(const KernelMap& raw, const KernelMap& upstream) {
  if (raw.k != 3 || upstream.k != 3 || raw.h != upstream.h || raw.w != upstream.w)
    throw ArgumentError("normalize_affinities_backward shape mismatch");

  const int center = 4;
  KernelMap grad(raw.h, raw.w, 3);
  const std::size_t px_count = std::size_t(raw.h) * raw.w;
  for (std::size_t px = 0; px < px_count; ++px) {
    const double* in = raw.data.data() + px * 9;
    const double* up = upstream.data.data() + px * 9;
    double* g = grad.data.data() + px * 9;
    double abs_sum = 0.0;
    for (int c = 0; c < 9; ++c)
      if (c != center) abs_sum += std::abs(in[c]);
    const double up_c = up[center];
    if (abs_sum <= 1.0) {
      // s == 1 and does not vary with the inputs
      for (int c = 0; c < 9; ++c)
        if (c != center) g[c] = up[c] - up_c;
    } else {
      const double s = abs_sum;
      double raw_sum = 0.0, up_dot = 0.0;
      for (int c = 0; c < 9; ++c)
        if (c != center) {
          raw_sum += in[c];
          up_dot += up[c] * in[c];
        }
      for (int c = 0; c < 9; ++c)
        if (c != center) {
          const double sg = sign0(in[c]);
          g[c] = up[c] / s - sg * up_dot / (s * s) - up_c / s + up_c * raw_sum * sg / (s * s);
        }
    }
  }
  return grad;
}

DisparityMap cspn_refine(const DisparityMap& d0, const KernelMap& kernels, int iterations,
                         CspnTrace* trace) {
  if (iterations < 0) throw ArgumentError("cspn iterations must be >= 0");
  if (kernels.h != d0.h || kernels.w != d0.w || kernels.k != 3)
    throw ArgumentError("cspn kernel map shape mismatch");
  if (d0.empty()) throw ArgumentError("empty disparity map");
  require_finite(d0, "disparity");

  const std::size_t px_count = d0.size();
  for (std::size_t px = 0; px < px_count; ++px) {
    double sum = 0.0;
    for (int c = 0; c < 9; ++c) sum += kernels.data[px * 9 + c];
    if (std::abs(sum - 1.0) > 1e-6)
      throw ValidationError("cspn kernel does not sum to 1");
  }

  const int h = d0.h, w = d0.w;
  DisparityMap cur = d0;
  if (trace) {
    trace->states.clear();
    trace->states.reserve(iterations + 1);
    trace->states.push_back(cur);
  }
  DisparityMap next(h, w, MapRole::Disparity);
  for (int it = 0; it < iterations; ++it) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double* kk = kernels.data.data() + (std::size_t(y) * w + x) * 9;
        double acc = 0.0;
        for (int ky = 0; ky < 3; ++ky) {
          const int cy = std::clamp(y + ky - 1, 0, h - 1);
          for (int kx = 0; kx < 3; ++kx) {
            const int cx = std::clamp(x + kx - 1, 0, w - 1);
            acc += kk[ky * 3 + kx] * cur.at(cy, cx);
          }
        }
        next.at(y, x) = acc;
      }
    }
    std::swap(cur, next);
    if (trace) trace->states.push_back(cur);
  }
  return cur;
}

CspnGrads cspn_backward(const CspnTrace& trace, const KernelMap& kernels,
                        const ScalarMap& upstream) {
  if (trace.states.empty()) throw ArgumentError("empty cspn trace");
  const DisparityMap& d0 = trace.states.front();
  if (upstream.h != d0.h || upstream.w != d0.w)
    throw ArgumentError("cspn_backward shape mismatch");
  if (kernels.h != d0.h || kernels.w != d0.w || kernels.k != 3)
    throw ArgumentError("cspn_backward kernel shape mismatch");

  const int h = d0.h, w = d0.w;
  const int iterations = int(trace.states.size()) - 1;

  CspnGrads out;
  out.kernels = KernelMap(h, w, 3);
  ScalarMap g_cur = upstream;
  ScalarMap g_prev(h, w);
  for (int it = iterations - 1; it >= 0; --it) {
    const DisparityMap& prev = trace.states[std::size_t(it)];
    std::fill(g_prev.data.begin(), g_prev.data.end(), 0.0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double g = g_cur.at(y, x);
        const std::size_t base = (std::size_t(y) * w + x) * 9;
        for (int ky = 0; ky < 3; ++ky) {
          const int cy = std::clamp(y + ky - 1, 0, h - 1);
          for (int kx = 0; kx < 3; ++kx) {
            const int cx = std::clamp(x + kx - 1, 0, w - 1);
            g_prev.at(cy, cx) += g * kernels.data[base + ky * 3 + kx];
            out.kernels.data[base + ky * 3 + kx] += g * prev.at(cy, cx);
          }
        }
      }
    }
    std::swap(g_cur, g_prev);
  }
  out.d0 = std::move(g_cur);
  return out;
}

}  // namespace dsm
