#pragma once

#include <vector>

#include "dsm/params.hpp"
#include "dsm/volume.hpp"

namespace dsm {

// Per-pixel k x k affinity kernels, row-major (y, x, ky, kx).
struct KernelMap {
  int h = 0, w = 0, k = 0;
  std::vector<double> data;

  KernelMap() = default;
  KernelMap(int h_, int w_, int k_)
      : h(h_), w(w_), k(k_), data(std::size_t(h_) * w_ * k_ * k_, 0.0) {}

  double& at(int y, int x, int ky, int kx) {
    return data[((std::size_t(y) * w + x) * k + ky) * k + kx];
  }
  double at(int y, int x, int ky, int kx) const {
    return data[((std::size_t(y) * w + x) * k + ky) * k + kx];
  }
  std::size_t size() const { return data.size(); }
};

// Encoder-decoder that maps a 3-channel guidance stack (disparity, image,
// matchability) to the 8 neighbor affinities of a 3x3 kernel per pixel:
//   conv3x3 (3->16) + relu, avgpool2, conv3x3 (16->32) + relu,
//   bilinear resize back, conv3x3 (32->16) + relu, conv3x3 (16->8).
// The kernel center channel is not predicted; the raw map carries 0 there.
struct KernelNet {
  static constexpr int kIn = 3;
  static constexpr int kEnc1 = 16;
  static constexpr int kEnc2 = 32;
  static constexpr int kDec1 = 16;
  static constexpr int kOut = 8;

  Tensor* enc1_w = nullptr;  // (16,3,3,3)
  Tensor* enc1_b = nullptr;
  Tensor* enc2_w = nullptr;  // (32,16,3,3)
  Tensor* enc2_b = nullptr;
  Tensor* dec1_w = nullptr;  // (16,32,3,3)
  Tensor* dec1_b = nullptr;
  Tensor* out_w = nullptr;   // (8,16,3,3)
  Tensor* out_b = nullptr;

  // When false the matchability channel is replaced by zeros, with parameter
  // shapes and initialization unchanged.
  bool use_matchability = true;

  void init(ParamSet& params, Rng& rng);
  void bind(ParamSet& params);
};

struct KernelNetTrace {
  int h = 0, w = 0, h2 = 0, w2 = 0;
  std::vector<double> input;    // (3,h,w), after optional matchability zeroing
  std::vector<double> e1_pre;   // (16,h,w)
  std::vector<double> e1;       // (16,h,w)
  std::vector<double> pooled;   // (16,h2,w2)
  std::vector<double> e2_pre;   // (32,h2,w2)
  std::vector<double> e2;       // (32,h2,w2)
  std::vector<double> up;       // (32,h,w)
  std::vector<double> d1_pre;   // (16,h,w)
  std::vector<double> d1;       // (16,h,w)
};

KernelMap extract_diffusion_kernels(const DisparityMap& d, const ScalarMap& image,
                                    const MatchabilityMap& m, const KernelNet& net,
                                    KernelNetTrace* trace = nullptr);

struct KernelNetInputGrads {
  ScalarMap d;
  ScalarMap image;
  ScalarMap m;
};

// upstream carries gradients for the raw kernel map; its center entries are
// ignored (the forward pass never predicts them). Parameter gradients are
// accumulated on the net's tensors.
KernelNetInputGrads kernel_net_backward(const KernelNetTrace& trace, const KernelNet& net,
                                        const KernelMap& upstream);

// kappa_n / max(sum |kappa|, 1) for the 8 neighbors; center is set to
// 1 - sum of the normalized neighbors, making every kernel sum to 1.
KernelMap normalize_affinities(const KernelMap& raw);

// Gradient wrt the raw neighbor affinities; center entries of the result
// stay 0 because the raw center is never read.
KernelMap normalize_affinities_backward(const KernelMap& raw, const KernelMap& upstream);

struct CspnTrace {
  // states[0] is the input map, states[i] the result of iteration i.
  std::vector<DisparityMap> states;
};

// Iterated local diffusion with edge replication. Kernels must sum to 1
// within 1e-6 per pixel (ValidationError otherwise).
DisparityMap cspn_refine(const DisparityMap& d0, const KernelMap& kernels, int iterations = 24,
                         CspnTrace* trace = nullptr);

struct CspnGrads {
  ScalarMap d0;
  KernelMap kernels;
};

CspnGrads cspn_backward(const CspnTrace& trace, const KernelMap& kernels,
                        const ScalarMap& upstream);

}  // namespace dsm
