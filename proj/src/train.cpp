#include "dsm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace dsm {

namespace {

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

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ArgumentError("config: bad boolean for " + key + ": '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  return out;
}

void scale_add(ScalarMap& acc, const ScalarMap& g, double scale) {
  if (acc.empty()) {
    acc = g;
    for (double& v : acc.data) v *= scale;
    return;
  }
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += scale * g.data[i];
}

}  // namespace

TrainConfig TrainConfig::from_file(const std::string& path) {
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

  TrainConfig cfg;
  bool reg_depth_given = false;
  for (const auto& [k, v] : kv) {
    if (k == "disparities") cfg.matcher.disparities = parse_int(k, v);
    else if (k == "stride") cfg.matcher.stride = parse_int(k, v);
    else if (k == "cost_mode") {
      if (v == "concat") cfg.matcher.cost_mode = CostMode::Concat;
      else if (v == "absdiff") cfg.matcher.cost_mode = CostMode::AbsDiff;
      else throw ArgumentError("config: cost_mode must be concat or absdiff");
    } else if (k == "feature_mode") {
      if (v == "learned") cfg.matcher.feature_mode = FeatureMode::Learned;
      else if (v == "census") cfg.matcher.feature_mode = FeatureMode::Census;
      else throw ArgumentError("config: feature_mode must be learned or census");
    } else if (k == "channels") cfg.matcher.channels = parse_int(k, v);
    else if (k == "temperature") cfg.matcher.temperature = parse_double(k, v);
    else if (k == "refine_iters") cfg.matcher.refine_iters = parse_int(k, v);
    else if (k == "reg_depth") {
      cfg.matcher.reg_depth = parse_int(k, v);
      reg_depth_given = true;
    } else if (k == "kernel_use_matchability") cfg.matcher.kernel_use_matchability = parse_bool(k, v);
    else if (k == "height") cfg.data.h = parse_int(k, v);
    else if (k == "width") cfg.data.w = parse_int(k, v);
    else if (k == "max_disp") cfg.data.max_disp = parse_int(k, v);
    else if (k == "textureless_fraction") cfg.data.textureless_fraction = parse_double(k, v);
    else if (k == "constant_disparity") cfg.data.constant_disparity = parse_double(k, v);
    else if (k == "samples") cfg.samples = parse_int(k, v);
    else if (k == "epochs") cfg.epochs = parse_int(k, v);
    else if (k == "max_steps") cfg.max_steps = parse_int(k, v);
    else if (k == "lr") cfg.adam.lr = parse_double(k, v);
    else if (k == "beta1") cfg.adam.beta1 = parse_double(k, v);
    else if (k == "beta2") cfg.adam.beta2 = parse_double(k, v);
    else if (k == "lambda_init") cfg.lambda_init = parse_double(k, v);
    else if (k == "lambda_joint") cfg.lambda_joint = parse_double(k, v);
    else if (k == "lambda_refined") cfg.lambda_refined = parse_double(k, v);
    else if (k == "max_valid_disp") cfg.max_valid_disp = parse_double(k, v);
    else if (k == "lr_halve_epochs") cfg.lr_halve_epochs = parse_int_list(k, v);
    else throw ArgumentError("config: unknown key " + k);
  }
  if (!reg_depth_given)
    cfg.matcher.reg_depth =
        MatcherConfig::derived_reg_depth(cfg.matcher.cost_mode, cfg.matcher.feature_mode);
  cfg.validate();
  return cfg;
}

void TrainConfig::validate() const {
  matcher.validate();
  data.validate();
  if (samples < 1) throw ArgumentError("config: samples must be >= 1");
  if (epochs < 1) throw ArgumentError("config: epochs must be >= 1");
  if (max_steps < 0) throw ArgumentError("config: max_steps must be >= 0");
  if (adam.lr < 0.0) throw ArgumentError("config: lr must be >= 0");
  if (lambda_init < 0.0 || lambda_joint < 0.0 || lambda_refined < 0.0)
    throw ArgumentError("config: loss weights must be >= 0");
  if (max_valid_disp <= 0.0) throw ArgumentError("config: max_valid_disp must be positive");
  for (int m : lr_halve_epochs)
    if (m < 1) throw ArgumentError("config: lr_halve_epochs entries must be >= 1");
}

TrainResult train(const TrainConfig& cfg, std::uint64_t seed, const std::string& checkpoint_path,
                  const std::string& history_path) {
  cfg.validate();

  std::vector<SyntheticSample> samples;
  samples.reserve(cfg.samples);
  for (int i = 0; i < cfg.samples; ++i)
    samples.push_back(gen_synthetic_pair(seed ^ (0x5bd1e995ull * std::uint64_t(i + 1)), cfg.data));

  TrainResult res;
  res.params = init_params(cfg.matcher, seed);
  AdamState adam;
  adam.cfg = cfg.adam;

  const double base_lr = cfg.adam.lr;
  bool stop = false;
  for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    int halvings = 0;
    for (int m : cfg.lr_halve_epochs)
      if (epoch > m) ++halvings;
    adam.cfg.lr = base_lr * std::pow(0.5, halvings);

    LossBreakdown acc;
    int epoch_steps = 0;
    double err_sum = 0.0;
    std::size_t err_count = 0;

    for (const SyntheticSample& s : samples) {
      if (cfg.max_steps > 0 && res.steps >= cfg.max_steps) {
        stop = true;
        break;
      }
      LossBreakdown lb;
      try {
        MatchTrace trace;
        MatchOutput out = match(s.left, s.right, cfg.matcher, res.params, false, &trace);
        const MaskMap mask = valid_mask(s.dgt, cfg.max_valid_disp);

        lb.l1_init = l1_loss(out.d_init, s.dgt, mask);
        lb.joint = joint_loss(out.d_init, s.dgt, out.logscale, mask);
        lb.l1_refined = l1_loss(out.d_refined, s.dgt, mask);
        lb.total = total_loss(lb.l1_init, lb.joint, lb.l1_refined, cfg.lambda_init,
                              cfg.lambda_joint, cfg.lambda_refined);
        for (std::size_t i = 0; i < mask.data.size(); ++i)
          if (mask.data[i] != 0.0) {
            err_sum += std::abs(out.d_refined.data[i] - s.dgt.data[i]);
            ++err_count;
          }
        lb.valid_pixel_count = std::size_t(std::count_if(
            mask.data.begin(), mask.data.end(), [](double v) { return v != 0.0; }));
        if (!std::isfinite(lb.total)) throw ValidationError("non-finite loss");

        res.params.zero_grad();
        ScalarMap g_init, g_logscale, g_ref;
        if (cfg.lambda_init > 0.0)
          scale_add(g_init, l1_loss_backward(out.d_init, s.dgt, mask, 1.0), cfg.lambda_init);
        if (cfg.lambda_joint > 0.0) {
          const JointLossGrads jg =
              joint_loss_backward(out.d_init, s.dgt, out.logscale, mask, 1.0);
          scale_add(g_init, jg.d_disparity, cfg.lambda_joint);
          scale_add(g_logscale, jg.d_logscale, cfg.lambda_joint);
        }
        if (cfg.lambda_refined > 0.0)
          scale_add(g_ref, l1_loss_backward(out.d_refined, s.dgt, mask, 1.0), cfg.lambda_refined);

        match_backward(trace, res.params, g_init, g_logscale, g_ref);
        adam_step(res.params, adam);
      } catch (const ValidationError&) {
        res.diverged = true;
        stop = true;
        break;
      }

      ++res.steps;
      ++epoch_steps;
      acc.l1_init += lb.l1_init;
      acc.joint += lb.joint;
      acc.l1_refined += lb.l1_refined;
      acc.valid_pixel_count += lb.valid_pixel_count;
    }

    if (epoch_steps > 0) {
      EpochStats st;
      st.epoch = epoch;
      st.mean.l1_init = acc.l1_init / epoch_steps;
      st.mean.joint = acc.joint / epoch_steps;
      st.mean.l1_refined = acc.l1_refined / epoch_steps;
      st.mean.total = total_loss(st.mean.l1_init, st.mean.joint, st.mean.l1_refined,
                                 cfg.lambda_init, cfg.lambda_joint, cfg.lambda_refined);
      st.mean.valid_pixel_count = acc.valid_pixel_count;
      st.epe = err_count ? err_sum / double(err_count) : 0.0;
      res.history.push_back(st);
      if (!checkpoint_path.empty()) save_checkpoint(res.params, checkpoint_path);
    }
  }

  if (!checkpoint_path.empty()) save_checkpoint(res.params, checkpoint_path);
  if (!history_path.empty()) {
    std::ofstream out(history_path);
    if (!out) throw ArgumentError("cannot open history file: " + history_path);
    out << "epoch,l1_init,joint,l1_ref,total,epe\n";
    char buf[256];
    for (const EpochStats& st : res.history) {
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", st.epoch,
                    st.mean.l1_init, st.mean.joint, st.mean.l1_refined, st.mean.total, st.epe);
      out << buf;
    }
  }
  return res;
}

}  // namespace dsm
