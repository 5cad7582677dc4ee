#include "dsm/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "dsm/nn.hpp"
#include "dsm/regression.hpp"

namespace dsm {

namespace {

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int r = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ArgumentError("config: bad integer for " + key + ": '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ArgumentError("config: bad number for " + key + ": '" + v + "'");
  }
}

}  // namespace

MatcherConfig MatcherConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ArgumentError("config: expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (kv.count(key)) throw ArgumentError("config: duplicate key " + key);
    kv[key] = val;
  }

  static const char* kKeys[] = {"disparities", "stride",      "cost_mode",   "feature_mode",
                                "channels",    "temperature", "refine_iters"};
  for (const char* k : kKeys)
    if (!kv.count(k)) throw ArgumentError(std::string("config: missing key ") + k);
  for (const auto& [k, v] : kv) {
    bool known = false;
    for (const char* kk : kKeys) known = known || k == kk;
    if (!known) throw ArgumentError("config: unknown key " + k);
  }

  MatcherConfig cfg;
  cfg.disparities = parse_int("disparities", kv["disparities"]);
  cfg.stride = parse_int("stride", kv["stride"]);
  if (kv["cost_mode"] == "concat")
    cfg.cost_mode = CostMode::Concat;
  else if (kv["cost_mode"] == "absdiff")
    cfg.cost_mode = CostMode::AbsDiff;
  else
    throw ArgumentError("config: cost_mode must be concat or absdiff");
  if (kv["feature_mode"] == "learned")
    cfg.feature_mode = FeatureMode::Learned;
  else if (kv["feature_mode"] == "census")
    cfg.feature_mode = FeatureMode::Census;
  else
    throw ArgumentError("config: feature_mode must be learned or census");
  cfg.channels = parse_int("channels", kv["channels"]);
  cfg.temperature = parse_double("temperature", kv["temperature"]);
  cfg.refine_iters = parse_int("refine_iters", kv["refine_iters"]);
  cfg.reg_depth = derived_reg_depth(cfg.cost_mode, cfg.feature_mode);
  cfg.validate();
  return cfg;
}

void MatcherConfig::validate() const {
  if (disparities < 2) throw ArgumentError("config: disparities must be >= 2");
  if (stride != 1 && stride != 2) throw ArgumentError("config: stride must be 1 or 2");
  if (bins() < 2) throw ArgumentError("config: need at least 2 disparity bins at feature stride");
  if (channels < 1) throw ArgumentError("config: channels must be >= 1");
  if (feature_mode == FeatureMode::Census) census_window();
  if (temperature <= 0.0) throw ArgumentError("config: temperature must be positive");
  if (refine_iters < 0) throw ArgumentError("config: refine_iters must be >= 0");
  if (reg_depth != 0 && reg_depth != 3)
    throw ArgumentError("config: regularizer depth must be 0 or 3");
  if (cost_mode == CostMode::Concat && reg_depth == 0)
    throw ArgumentError("config: concat cost needs the regularizer to reduce to scalar");
}

int MatcherConfig::census_window() const {
  const int win = int(std::lround(std::sqrt(double(channels + 1))));
  if (win * win != channels + 1 || win % 2 == 0 || win < 3)
    throw ArgumentError("config: census channels must be window^2-1 for odd window >= 3");
  return win;
}

ScalarMap normalize_intensity(const ScalarMap& image) {
  if (image.empty()) throw ArgumentError("empty image");
  require_finite(image, "image");
  const double n = double(image.size());
  double mean = 0.0;
  for (double v : image.data) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : image.data) var += (v - mean) * (v - mean);
  var /= n;
  const double scale = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
  ScalarMap out(image.h, image.w, MapRole::Luminance);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = (image.data[i] - mean) * scale;
  return out;
}

namespace {

ScalarMap decimate(const ScalarMap& image, int stride) {
  if (stride == 1) return image;
  if (image.h % stride != 0 || image.w % stride != 0)
    throw ArgumentError("image dims must be divisible by the stride");
  ScalarMap out(image.h / stride, image.w / stride, image.role);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.at(y, x) = image.at(y * stride, x * stride);
  return out;
}

}  // namespace

void FeatureNet::init(ParamSet& params, int c, Rng& rng) {
  channels = c;
  w1 = &params.add("features.w1", {c, 1, 3, 3});
  b1 = &params.add("features.b1", {c});
  w2 = &params.add("features.w2", {c, c, 3, 3});
  b2 = &params.add("features.b2", {c});
  fill_he_uniform(*w1, 1 * 3 * 3, rng);
  fill_he_uniform(*w2, c * 3 * 3, rng);
}

void FeatureNet::bind(ParamSet& params, int c) {
  channels = c;
  w1 = &params.require("features.w1");
  b1 = &params.require("features.b1");
  w2 = &params.require("features.w2");
  b2 = &params.require("features.b2");
}

FeatureMap census_features(const ScalarMap& image, int window, int stride) {
  if (window < 3 || window % 2 == 0) throw ArgumentError("census window must be odd and >= 3");
  const ScalarMap img = decimate(image, stride);
  if (img.h < window || img.w < window)
    throw ArgumentError("image smaller than the census window");
  require_finite(img, "image");

  const int r = window / 2;
  FeatureMap f(window * window - 1, img.h, img.w, stride);
  int ch = 0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dy == 0 && dx == 0) continue;
      for (int y = 0; y < img.h; ++y) {
        const int ny = std::clamp(y + dy, 0, img.h - 1);
        for (int x = 0; x < img.w; ++x) {
          const int nx = std::clamp(x + dx, 0, img.w - 1);
          f.at(ch, y, x) = img.at(ny, nx) > img.at(y, x) ? 1.0 : 0.0;
        }
      }
      ++ch;
    }
  }
  return f;
}

FeatureMap learned_features(const ScalarMap& image, const FeatureNet& net, int stride,
                            FeatureNetTrace* trace) {
  if (!net.w1 || !net.b1 || !net.w2 || !net.b2)
    throw ArgumentError("feature net is not bound to parameters");
  const ScalarMap img = decimate(image, stride);
  if (img.h < 5 || img.w < 5) throw ArgumentError("image smaller than the receptive field");
  require_finite(img, "image");
  for (const Tensor* t : {net.w1, net.b1, net.w2, net.b2})
    for (double v : t->value)
      if (!std::isfinite(v)) throw ValidationError("feature net has non-finite parameters");

  const int c = net.channels, h = img.h, w = img.w;
  const std::size_t plane = std::size_t(h) * w;
  std::vector<double> h1_pre(c * plane), h1(c * plane), h2_pre(c * plane);
  conv2d(img.data.data(), 1, h, w, net.w1->value.data(), net.b1->value.data(), c, 3,
         h1_pre.data());
  relu(h1_pre.data(), h1.data(), h1_pre.size());
  conv2d(h1.data(), c, h, w, net.w2->value.data(), net.b2->value.data(), c, 3, h2_pre.data());

  FeatureMap f(c, h, w, stride);
  relu(h2_pre.data(), f.data.data(), h2_pre.size());

  if (trace) {
    trace->h = h;
    trace->w = w;
    trace->input = img.data;
    trace->h1_pre = std::move(h1_pre);
    trace->h1 = std::move(h1);
    trace->h2_pre = std::move(h2_pre);
  }
  return f;
}

ScalarMap feature_net_backward(const FeatureNetTrace& trace, const FeatureNet& net,
                               const FeatureMap& upstream) {
  if (upstream.h != trace.h || upstream.w != trace.w || upstream.c != net.channels)
    throw ArgumentError("feature_net_backward shape mismatch");
  const int c = net.channels, h = trace.h, w = trace.w;

  std::vector<double> g_h2_pre(upstream.data.size(), 0.0);
  relu_backward(trace.h2_pre.data(), upstream.data.data(), g_h2_pre.data(), g_h2_pre.size());

  std::vector<double> g_h1(std::size_t(c) * h * w, 0.0);
  conv2d_backward(trace.h1.data(), c, h, w, net.w2->value.data(), c, 3, g_h2_pre.data(),
                  g_h1.data(), net.w2->grad.data(), net.b2->grad.data());

  std::vector<double> g_h1_pre(g_h1.size(), 0.0);
  relu_backward(trace.h1_pre.data(), g_h1.data(), g_h1_pre.data(), g_h1.size());

  ScalarMap g_img(h, w);
  conv2d_backward(trace.input.data(), 1, h, w, net.w1->value.data(), c, 3, g_h1_pre.data(),
                  g_img.data.data(), net.w1->grad.data(), net.b1->grad.data());
  return g_img;
}

namespace {

void check_feature_pair(const FeatureMap& fl, const FeatureMap& fr, int d) {
  if (fl.c != fr.c || fl.h != fr.h || fl.w != fr.w)
    throw ArgumentError("feature maps must share one shape");
  if (fl.c < 1 || fl.h < 1 || fl.w < 1) throw ArgumentError("empty feature map");
  if (d < 1) throw ArgumentError("need at least one disparity sample");
  if (d > fl.w) throw ArgumentError("more disparity samples than image columns");
}

}  // namespace

CostVolume build_cost_volume_absdiff(const FeatureMap& fl, const FeatureMap& fr, int d) {
  check_feature_pair(fl, fr, d);
  CostVolume cost(d, fl.h, fl.w);
  for (int dd = 0; dd < d; ++dd)
    for (int y = 0; y < fl.h; ++y)
      for (int x = 0; x < fl.w; ++x) {
        if (x < dd) {
          cost.at(dd, y, x) = kSentinelCost;
          continue;
        }
        double s = 0.0;
        for (int c = 0; c < fl.c; ++c) s += std::abs(fl.at(c, y, x) - fr.at(c, y, x - dd));
        cost.at(dd, y, x) = s;
      }
  return cost;
}

FeatureVolume build_cost_volume_concat(const FeatureMap& fl, const FeatureMap& fr, int d) {
  check_feature_pair(fl, fr, d);
  FeatureVolume out(2 * fl.c, d, fl.h, fl.w);
  for (int c = 0; c < fl.c; ++c)
    for (int dd = 0; dd < d; ++dd)
      for (int y = 0; y < fl.h; ++y)
        for (int x = dd; x < fl.w; ++x) {
          out.at(c, dd, y, x) = fl.at(c, y, x);
          out.at(fl.c + c, dd, y, x) = fr.at(c, y, x - dd);
        }
  return out;
}

FeatureVolume build_cost_volume_absdiff_channels(const FeatureMap& fl, const FeatureMap& fr,
                                                 int d) {
  check_feature_pair(fl, fr, d);
  FeatureVolume out(fl.c, d, fl.h, fl.w);
  for (int c = 0; c < fl.c; ++c)
    for (int dd = 0; dd < d; ++dd)
      for (int y = 0; y < fl.h; ++y)
        for (int x = dd; x < fl.w; ++x)
          out.at(c, dd, y, x) = std::abs(fl.at(c, y, x) - fr.at(c, y, x - dd));
  return out;
}

CostVolumeGrads cost_absdiff_backward(const FeatureMap& fl, const FeatureMap& fr,
                                      const Volume& upstream) {
  if (upstream.h != fl.h || upstream.w != fl.w)
    throw ArgumentError("cost_absdiff_backward shape mismatch");
  CostVolumeGrads g;
  g.fl = FeatureMap(fl.c, fl.h, fl.w, fl.stride);
  g.fr = FeatureMap(fr.c, fr.h, fr.w, fr.stride);
  for (int dd = 0; dd < upstream.d; ++dd)
    for (int y = 0; y < fl.h; ++y)
      for (int x = dd; x < fl.w; ++x) {
        const double up = upstream.at(dd, y, x);
        if (up == 0.0) continue;
        for (int c = 0; c < fl.c; ++c) {
          const double s = sign0(fl.at(c, y, x) - fr.at(c, y, x - dd));
          g.fl.at(c, y, x) += s * up;
          g.fr.at(c, y, x - dd) -= s * up;
        }
      }
  return g;
}

CostVolumeGrads cost_concat_backward(const FeatureMap& fl, const FeatureMap& fr,
                                     const FeatureVolume& upstream) {
  if (upstream.h != fl.h || upstream.w != fl.w || upstream.c != 2 * fl.c)
    throw ArgumentError("cost_concat_backward shape mismatch");
  CostVolumeGrads g;
  g.fl = FeatureMap(fl.c, fl.h, fl.w, fl.stride);
  g.fr = FeatureMap(fr.c, fr.h, fr.w, fr.stride);
  for (int c = 0; c < fl.c; ++c)
    for (int dd = 0; dd < upstream.d; ++dd)
      for (int y = 0; y < fl.h; ++y)
        for (int x = dd; x < fl.w; ++x) {
          g.fl.at(c, y, x) += upstream.at(c, dd, y, x);
          g.fr.at(c, y, x - dd) += upstream.at(fl.c + c, dd, y, x);
        }
  return g;
}

CostVolumeGrads cost_absdiff_channels_backward(const FeatureMap& fl, const FeatureMap& fr,
                                               const FeatureVolume& upstream) {
  if (upstream.h != fl.h || upstream.w != fl.w || upstream.c != fl.c)
    throw ArgumentError("cost_absdiff_channels_backward shape mismatch");
  CostVolumeGrads g;
  g.fl = FeatureMap(fl.c, fl.h, fl.w, fl.stride);
  g.fr = FeatureMap(fr.c, fr.h, fr.w, fr.stride);
  for (int c = 0; c < fl.c; ++c)
    for (int dd = 0; dd < upstream.d; ++dd)
      for (int y = 0; y < fl.h; ++y)
        for (int x = dd; x < fl.w; ++x) {
          const double s = sign0(fl.at(c, y, x) - fr.at(c, y, x - dd));
          const double up = upstream.at(c, dd, y, x);
          g.fl.at(c, y, x) += s * up;
          g.fr.at(c, y, x - dd) -= s * up;
        }
  return g;
}

void RegularizerNet::init(ParamSet& params, int cin_, Rng& rng) {
  cin = cin_;
  w1 = &params.add("reg.w1", {kHidden, cin_, 3, 3, 3});
  b1 = &params.add("reg.b1", {kHidden});
  w2 = &params.add("reg.w2", {kHidden, kHidden, 3, 3, 3});
  b2 = &params.add("reg.b2", {kHidden});
  w3 = &params.add("reg.w3", {1, kHidden, 3, 3, 3});
  b3 = &params.add("reg.b3", {1});
  fill_he_uniform(*w1, cin_ * 27, rng);
  fill_he_uniform(*w2, kHidden * 27, rng);
  fill_he_uniform(*w3, kHidden * 27, rng);
}

void RegularizerNet::bind(ParamSet& params, int cin_) {
  cin = cin_;
  w1 = &params.require("reg.w1");
  b1 = &params.require("reg.b1");
  w2 = &params.require("reg.w2");
  b2 = &params.require("reg.b2");
  w3 = &params.require("reg.w3");
  b3 = &params.require("reg.b3");
  if (w1->shape.size() != 5 || w1->shape[1] != cin_)
    throw ArgumentError("regularizer weights do not match the configured channel count");
}

CostVolume regularize(const FeatureVolume& raw, const RegularizerNet& net,
                      RegularizerTrace* trace) {
  if (!net.w1) throw ArgumentError("regularizer is not bound to parameters");
  if (raw.c != net.cin) throw ArgumentError("regularizer input channel mismatch");
  if (raw.c < 1 || raw.d < 1 || raw.h < 1 || raw.w < 1)
    throw ArgumentError("empty cost volume");
  for (const Tensor* t : {net.w1, net.b1, net.w2, net.b2, net.w3, net.b3})
    for (double v : t->value)
      if (!std::isfinite(v)) throw ValidationError("regularizer has non-finite parameters");

  const int d = raw.d, h = raw.h, w = raw.w;
  const std::size_t vol = std::size_t(d) * h * w;
  std::vector<double> h1_pre(RegularizerNet::kHidden * vol), h1(h1_pre.size());
  std::vector<double> h2_pre(h1_pre.size()), h2(h1_pre.size());

  conv3d(raw.data.data(), raw.c, d, h, w, net.w1->value.data(), net.b1->value.data(),
         RegularizerNet::kHidden, 3, h1_pre.data());
  relu(h1_pre.data(), h1.data(), h1_pre.size());
  conv3d(h1.data(), RegularizerNet::kHidden, d, h, w, net.w2->value.data(), net.b2->value.data(),
         RegularizerNet::kHidden, 3, h2_pre.data());
  relu(h2_pre.data(), h2.data(), h2_pre.size());

  CostVolume cost(d, h, w);
  conv3d(h2.data(), RegularizerNet::kHidden, d, h, w, net.w3->value.data(), net.b3->value.data(),
         1, 3, cost.data.data());

  if (trace) {
    trace->cin = raw.c;
    trace->d = d;
    trace->h = h;
    trace->w = w;
    trace->input = raw.data;
    trace->h1_pre = std::move(h1_pre);
    trace->h1 = std::move(h1);
    trace->h2_pre = std::move(h2_pre);
    trace->h2 = std::move(h2);
  }
  return cost;
}

FeatureVolume regularize_backward(const RegularizerTrace& trace, const RegularizerNet& net,
                                  const Volume& upstream) {
  if (upstream.d != trace.d || upstream.h != trace.h || upstream.w != trace.w)
    throw ArgumentError("regularize_backward shape mismatch");
  const int d = trace.d, h = trace.h, w = trace.w;

  std::vector<double> g_h2(trace.h2.size(), 0.0);
  conv3d_backward(trace.h2.data(), RegularizerNet::kHidden, d, h, w, net.w3->value.data(), 1, 3,
                  upstream.data.data(), g_h2.data(), net.w3->grad.data(), net.b3->grad.data());

  std::vector<double> g_h2_pre(g_h2.size(), 0.0);
  relu_backward(trace.h2_pre.data(), g_h2.data(), g_h2_pre.data(), g_h2.size());

  std::vector<double> g_h1(trace.h1.size(), 0.0);
  conv3d_backward(trace.h1.data(), RegularizerNet::kHidden, d, h, w, net.w2->value.data(),
                  RegularizerNet::kHidden, 3, g_h2_pre.data(), g_h1.data(), net.w2->grad.data(),
                  net.b2->grad.data());

  std::vector<double> g_h1_pre(g_h1.size(), 0.0);
  relu_backward(trace.h1_pre.data(), g_h1.data(), g_h1_pre.data(), g_h1.size());

  FeatureVolume g_raw(trace.cin, d, h, w);
  conv3d_backward(trace.input.data(), trace.cin, d, h, w, net.w1->value.data(),
                  RegularizerNet::kHidden, 3, g_h1_pre.data(), g_raw.data.data(),
                  net.w1->grad.data(), net.b1->grad.data());
  return g_raw;
}

ParamSet init_params(const MatcherConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet ps;
  if (cfg.feature_mode == FeatureMode::Learned) {
    FeatureNet f;
    f.init(ps, cfg.channels, rng);
  }
  if (cfg.reg_depth > 0) {
    RegularizerNet r;
    const int cin = cfg.cost_mode == CostMode::Concat ? 2 * cfg.channels : cfg.channels;
    r.init(ps, cin, rng);
  }
  UncertaintyNet u;
  u.init(ps, rng);
  KernelNet k;
  k.init(ps, rng);
  return ps;
}

MatchOutput match(const ScalarMap& left, const ScalarMap& right, const MatcherConfig& cfg,
                  ParamSet& params, bool keep_prob, MatchTrace* trace) {
  cfg.validate();
  if (!left.same_shape(right)) throw ArgumentError("stereo pair dims differ");
  if (left.empty()) throw ArgumentError("empty image");
  require_finite(left, "left image");
  require_finite(right, "right image");
  if (left.h % cfg.stride != 0 || left.w % cfg.stride != 0)
    throw ArgumentError("image dims must be divisible by the stride");

  const int ds = cfg.bins();
  const ScalarMap norm_l = normalize_intensity(left);
  const ScalarMap norm_r = normalize_intensity(right);

  FeatureMap fl, fr;
  FeatureNet feat_net;
  if (cfg.feature_mode == FeatureMode::Census) {
    const int win = cfg.census_window();
    fl = census_features(norm_l, win, cfg.stride);
    fr = census_features(norm_r, win, cfg.stride);
  } else {
    feat_net.bind(params, cfg.channels);
    fl = learned_features(norm_l, feat_net, cfg.stride, trace ? &trace->fl_trace : nullptr);
    fr = learned_features(norm_r, feat_net, cfg.stride, trace ? &trace->fr_trace : nullptr);
  }
  const int hs = fl.h, ws = fl.w;
  if (ds > ws) throw ArgumentError("more disparity bins than feature columns");

  std::vector<unsigned char> invalid(std::size_t(ds) * hs * ws, 0);
  for (int dd = 0; dd < ds; ++dd)
    for (int y = 0; y < hs; ++y)
      for (int x = 0; x < dd && x < ws; ++x) invalid[(std::size_t(dd) * hs + y) * ws + x] = 1;

  CostVolume cost_small;
  FeatureVolume raw_cost;
  RegularizerNet reg_net;
  if (cfg.reg_depth == 0) {
    cost_small = build_cost_volume_absdiff(fl, fr, ds);
  } else {
    const int cin = cfg.cost_mode == CostMode::Concat ? 2 * cfg.channels : cfg.channels;
    raw_cost = cfg.cost_mode == CostMode::Concat
                   ? build_cost_volume_concat(fl, fr, ds)
                   : build_cost_volume_absdiff_channels(fl, fr, ds);
    reg_net.bind(params, cin);
    cost_small = regularize(raw_cost, reg_net, trace ? &trace->reg_trace : nullptr);
    for (std::size_t i = 0; i < invalid.size(); ++i)
      if (invalid[i]) cost_small.data[i] = kSentinelCost;
  }

  const CostVolume cost_full =
      cfg.stride > 1 ? upsample_trilinear(cost_small, cfg.stride) : std::move(cost_small);
  ProbabilityVolume prob = softmax_over_disparity(cost_full, cfg.temperature);

  MatchOutput out;
  out.d_init = soft_argmin(prob);
  if (cfg.stride > 1)
    for (double& v : out.d_init.data) v *= cfg.stride;
  out.m = entropy_matchability(prob);

  UncertaintyNet unc_net;
  unc_net.bind(params);
  out.logscale = matchability_to_logscale(out.m, unc_net, trace ? &trace->unc_trace : nullptr);

  const double d_denom = double(cfg.disparities - 1);
  const double log_ds = std::log(double(ds));
  DisparityMap d_in(out.d_init.h, out.d_init.w, MapRole::Disparity);
  MatchabilityMap m_in(out.m.h, out.m.w, MapRole::Matchability);
  for (std::size_t i = 0; i < d_in.size(); ++i) {
    d_in.data[i] = out.d_init.data[i] / d_denom;
    m_in.data[i] = out.m.data[i] / log_ds;
  }

  KernelNet kernel_net;
  kernel_net.bind(params);
  kernel_net.use_matchability = cfg.kernel_use_matchability;
  KernelMap raw_kernels =
      extract_diffusion_kernels(d_in, left, m_in, kernel_net, trace ? &trace->kernel_trace : nullptr);
  KernelMap kernels = normalize_affinities(raw_kernels);

  DisparityMap d_ref_pre =
      cspn_refine(out.d_init, kernels, cfg.refine_iters, trace ? &trace->cspn_trace : nullptr);

  out.d_refined = DisparityMap(d_ref_pre.h, d_ref_pre.w, MapRole::Disparity);
  for (std::size_t i = 0; i < d_ref_pre.size(); ++i)
    out.d_refined.data[i] = std::clamp(d_ref_pre.data[i], 0.0, d_denom);

  if (keep_prob) {
    out.prob = prob;
    out.has_prob = true;
  }

  if (trace) {
    trace->cfg = cfg;
    trace->h = left.h;
    trace->w = left.w;
    trace->hs = hs;
    trace->ws = ws;
    trace->ds = ds;
    trace->lum = left;
    trace->fl = std::move(fl);
    trace->fr = std::move(fr);
    trace->invalid = std::move(invalid);
    trace->prob = std::move(prob);
    trace->d_init = out.d_init;
    trace->m = out.m;
    trace->logscale = out.logscale;
    trace->raw_kernels = std::move(raw_kernels);
    trace->kernels = std::move(kernels);
    trace->d_ref_pre = std::move(d_ref_pre.data);
  }
  return out;
}

void match_backward(const MatchTrace& trace, ParamSet& params, const ScalarMap& g_d_init,
                    const ScalarMap& g_logscale, const ScalarMap& g_d_refined) {
  const MatcherConfig& cfg = trace.cfg;
  const int h = trace.h, w = trace.w;
  const auto has = [&](const ScalarMap& m) { return m.h > 0; };
  for (const ScalarMap* m : {&g_d_init, &g_logscale, &g_d_refined})
    if (has(*m) && (m->h != h || m->w != w))
      throw ArgumentError("match_backward gradient shape mismatch");

  ScalarMap g_dinit_total(h, w);
  ScalarMap g_m_total(h, w);
  if (has(g_d_init))
    for (std::size_t i = 0; i < g_dinit_total.size(); ++i)
      g_dinit_total.data[i] = g_d_init.data[i];

  if (has(g_d_refined)) {
    const double d_denom = double(cfg.disparities - 1);
    ScalarMap g_pre(h, w);
    for (std::size_t i = 0; i < g_pre.size(); ++i) {
      const double v = trace.d_ref_pre[i];
      if (v > 0.0 && v < d_denom) g_pre.data[i] = g_d_refined.data[i];
    }

    CspnGrads cg = cspn_backward(trace.cspn_trace, trace.kernels, g_pre);
    for (std::size_t i = 0; i < g_dinit_total.size(); ++i)
      g_dinit_total.data[i] += cg.d0.data[i];

    KernelMap g_raw_k = normalize_affinities_backward(trace.raw_kernels, cg.kernels);

    KernelNet kernel_net;
    kernel_net.bind(params);
    kernel_net.use_matchability = cfg.kernel_use_matchability;
    KernelNetInputGrads kg = kernel_net_backward(trace.kernel_trace, kernel_net, g_raw_k);

    const double log_ds = std::log(double(trace.ds));
    for (std::size_t i = 0; i < g_dinit_total.size(); ++i) {
      g_dinit_total.data[i] += kg.d.data[i] / d_denom;
      g_m_total.data[i] += kg.m.data[i] / log_ds;
    }
  }

  if (has(g_logscale)) {
    UncertaintyNet unc_net;
    unc_net.bind(params);
    ScalarMap g_m_unc = uncertainty_backward(trace.unc_trace, unc_net, g_logscale);
    for (std::size_t i = 0; i < g_m_total.size(); ++i) g_m_total.data[i] += g_m_unc.data[i];
  }

  if (cfg.stride > 1)
    for (double& v : g_dinit_total.data) v *= cfg.stride;

  Volume g_prob = soft_argmin_backward(trace.prob, g_dinit_total);
  if (has(g_logscale) || has(g_d_refined)) {
    const Volume g_ent = entropy_backward(trace.prob, g_m_total);
    for (std::size_t i = 0; i < g_prob.size(); ++i) g_prob.data[i] += g_ent.data[i];
  }

  // Below the probability volume only the cost path can hold parameters.
  const bool cost_has_params =
      cfg.reg_depth > 0 || cfg.feature_mode == FeatureMode::Learned;
  if (!cost_has_params) return;

  Volume g_cost = softmax_backward(trace.prob, g_prob, cfg.temperature);
  if (cfg.stride > 1) g_cost = upsample_trilinear_backward(g_cost, trace.hs, trace.ws, cfg.stride);
  for (std::size_t i = 0; i < trace.invalid.size(); ++i)
    if (trace.invalid[i]) g_cost.data[i] = 0.0;

  CostVolumeGrads fg;
  if (cfg.reg_depth > 0) {
    const int cin = cfg.cost_mode == CostMode::Concat ? 2 * cfg.channels : cfg.channels;
    RegularizerNet reg_net;
    reg_net.bind(params, cin);
    FeatureVolume g_raw = regularize_backward(trace.reg_trace, reg_net, g_cost);
    if (cfg.feature_mode == FeatureMode::Census) return;  // features carry no parameters
    fg = cfg.cost_mode == CostMode::Concat
             ? cost_concat_backward(trace.fl, trace.fr, g_raw)
             : cost_absdiff_channels_backward(trace.fl, trace.fr, g_raw);
  } else {
    if (cfg.feature_mode == FeatureMode::Census) return;
    fg = cost_absdiff_backward(trace.fl, trace.fr, g_cost);
  }

  FeatureNet feat_net;
  feat_net.bind(params, cfg.channels);
  feature_net_backward(trace.fl_trace, feat_net, fg.fl);
  feature_net_backward(trace.fr_trace, feat_net, fg.fr);
}

}  // namespace dsm
