#pragma once

#include <string>
#include <vector>

#include "dsm/params.hpp"
#include "dsm/refinement.hpp"
#include "dsm/uncertainty.hpp"
#include "dsm/volume.hpp"

namespace dsm {

enum class CostMode { Concat, AbsDiff };
enum class FeatureMode { Learned, Census };

struct MatcherConfig {
  int disparities = 16;  // D, full-resolution disparity samples
  int stride = 1;        // 1 or 2
  CostMode cost_mode = CostMode::AbsDiff;
  FeatureMode feature_mode = FeatureMode::Census;
  int channels = 8;  // feature channels C; census needs C+1 = window^2
  int reg_depth = 0;  // regularizer conv layers, 0 (none) or 3
  double temperature = 1.0;
  int refine_iters = 24;
  // Variant switch for ablations; zeros the matchability input of the kernel
  // extractor while keeping parameter shapes. Not a config-file key.
  bool kernel_use_matchability = true;

  // Plain-text key=value file with exactly these keys: disparities, stride,
  // cost_mode, feature_mode, channels, temperature, refine_iters. The
  // regularizer depth is derived: scalar absdiff costs over census features
  // need no regularizer, every other combination gets the 3-layer stack.
  static MatcherConfig from_file(const std::string& path);
  static int derived_reg_depth(CostMode cm, FeatureMode fm) {
    return (cm == CostMode::AbsDiff && fm == FeatureMode::Census) ? 0 : 3;
  }

  void validate() const;
  int bins() const { return (disparities + stride - 1) / stride; }
  int census_window() const;
};

// (c, h, w) row-major feature stack at 1/stride resolution.
struct FeatureMap {
  int c = 0, h = 0, w = 0, stride = 1;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int c_, int h_, int w_, int stride_ = 1)
      : c(c_), h(h_), w(w_), stride(stride_), data(std::size_t(c_) * h_ * w_, 0.0) {}

  std::size_t plane() const { return std::size_t(h) * w; }
  double& at(int ch, int y, int x) { return data[(std::size_t(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return data[(std::size_t(ch) * h + y) * w + x]; }
};

// (c, d, h, w) row-major multi-channel cost volume (regularizer input).
struct FeatureVolume {
  int c = 0, d = 0, h = 0, w = 0;
  std::vector<double> data;

  FeatureVolume() = default;
  FeatureVolume(int c_, int d_, int h_, int w_)
      : c(c_), d(d_), h(h_), w(w_), data(std::size_t(c_) * d_ * h_ * w_, 0.0) {}

  double& at(int ch, int dd, int y, int x) {
    return data[((std::size_t(ch) * d + dd) * h + y) * w + x];
  }
  double at(int ch, int dd, int y, int x) const {
    return data[((std::size_t(ch) * d + dd) * h + y) * w + x];
  }
};

struct MatchOutput {
  DisparityMap d_init;
  MatchabilityMap m;
  LogScaleMap logscale;
  DisparityMap d_refined;
  ProbabilityVolume prob;  // populated only when requested
  bool has_prob = false;
};

// Zero mean, unit variance; a constant image is only centered.
ScalarMap normalize_intensity(const ScalarMap& image);

// Siamese feature frontend: two 3x3 convolutions with rectifiers.
struct FeatureNet {
  int channels = 0;
  Tensor* w1 = nullptr;  // (C,1,3,3)
  Tensor* b1 = nullptr;
  Tensor* w2 = nullptr;  // (C,C,3,3)
  Tensor* b2 = nullptr;

  void init(ParamSet& params, int c, Rng& rng);
  void bind(ParamSet& params, int c);
};

struct FeatureNetTrace {
  int h = 0, w = 0;
  std::vector<double> input;   // (1,h,w)
  std::vector<double> h1_pre;  // (C,h,w)
  std::vector<double> h1;
  std::vector<double> h2_pre;  // (C,h,w)
};

// window^2 - 1 binary neighbor-greater-than-center comparisons with border
// replication; channels follow row-major window order skipping the center.
FeatureMap census_features(const ScalarMap& image, int window, int stride = 1);

FeatureMap learned_features(const ScalarMap& image, const FeatureNet& net, int stride = 1,
                            FeatureNetTrace* trace = nullptr);

// Accumulates parameter gradients; returns gradient wrt the (decimated,
// normalized) input image handed to the net.
ScalarMap feature_net_backward(const FeatureNetTrace& trace, const FeatureNet& net,
                               const FeatureMap& upstream);

constexpr double kSentinelCost = 1e4;

// c(x,y,d) = sum_c |Fl(c,x,y) - Fr(c,x-d,y)|; out-of-range entries carry the
// sentinel cost.
CostVolume build_cost_volume_absdiff(const FeatureMap& fl, const FeatureMap& fr, int d);

// 2C channels: left features stacked over shifted right features; out-of-range
// entries hold zero features (flagged invalid downstream).
FeatureVolume build_cost_volume_concat(const FeatureMap& fl, const FeatureMap& fr, int d);

// C channels of per-channel absolute differences for the regularized absdiff
// path; out-of-range entries are zero.
FeatureVolume build_cost_volume_absdiff_channels(const FeatureMap& fl, const FeatureMap& fr,
                                                 int d);

struct CostVolumeGrads {
  FeatureMap fl;
  FeatureMap fr;
};

// Backward passes scatter into feature gradients, skipping invalid voxels.
CostVolumeGrads cost_absdiff_backward(const FeatureMap& fl, const FeatureMap& fr,
                                      const Volume& upstream);
CostVolumeGrads cost_concat_backward(const FeatureMap& fl, const FeatureMap& fr,
                                     const FeatureVolume& upstream);
CostVolumeGrads cost_absdiff_channels_backward(const FeatureMap& fl, const FeatureMap& fr,
                                               const FeatureVolume& upstream);

// Three 3x3x3 convolutions (cin -> 8 -> 8 -> 1) with rectifiers between,
// reducing a multi-channel volume to scalar matching cost.
struct RegularizerNet {
  static constexpr int kHidden = 8;
  int cin = 0;
  Tensor* w1 = nullptr;  // (8,cin,3,3,3)
  Tensor* b1 = nullptr;
  Tensor* w2 = nullptr;  // (8,8,3,3,3)
  Tensor* b2 = nullptr;
  Tensor* w3 = nullptr;  // (1,8,3,3,3)
  Tensor* b3 = nullptr;

  void init(ParamSet& params, int cin_, Rng& rng);
  void bind(ParamSet& params, int cin_);
};

struct RegularizerTrace {
  int cin = 0, d = 0, h = 0, w = 0;
  std::vector<double> input;
  std::vector<double> h1_pre, h1;
  std::vector<double> h2_pre, h2;
};

CostVolume regularize(const FeatureVolume& raw, const RegularizerNet& net,
                      RegularizerTrace* trace = nullptr);

// Gradient wrt the raw input volume; parameter gradients accumulate.
FeatureVolume regularize_backward(const RegularizerTrace& trace, const RegularizerNet& net,
                                  const Volume& upstream);

// Fresh parameter set for a config, deterministic in seed; tensors appear in
// canonical order (features, regularizer, uncertainty, kernel extractor).
ParamSet init_params(const MatcherConfig& cfg, std::uint64_t seed);

struct MatchTrace {
  MatcherConfig cfg;
  int h = 0, w = 0;    // full resolution
  int hs = 0, ws = 0;  // feature resolution
  int ds = 0;          // disparity bins
  ScalarMap lum;       // raw left image (kernel extractor guidance)
  FeatureMap fl, fr;
  FeatureNetTrace fl_trace, fr_trace;
  RegularizerTrace reg_trace;
  std::vector<unsigned char> invalid;  // (ds,hs,ws) sentinel voxels
  ProbabilityVolume prob;
  DisparityMap d_init;
  MatchabilityMap m;
  UncertaintyTrace unc_trace;
  LogScaleMap logscale;
  KernelNetTrace kernel_trace;
  KernelMap raw_kernels;
  KernelMap kernels;
  CspnTrace cspn_trace;
  std::vector<double> d_ref_pre;  // refined disparity before clamping
};

// Full pipeline: features -> cost volume -> (regularizer) -> softmax ->
// {soft-argmin, entropy} -> log-scale -> kernels -> diffusion.
MatchOutput match(const ScalarMap& left, const ScalarMap& right, const MatcherConfig& cfg,
                  ParamSet& params, bool keep_prob = false, MatchTrace* trace = nullptr);

// Pulls loss gradients at the three pipeline outputs back onto the parameter
// set. Empty maps (h == 0) mean "no gradient at this output".
void match_backward(const MatchTrace& trace, ParamSet& params, const ScalarMap& g_d_init,
                    const ScalarMap& g_logscale, const ScalarMap& g_d_refined);

}  // namespace dsm
