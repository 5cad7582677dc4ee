#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dsm/gradcheck.hpp"
#include "dsm/image_io.hpp"
#include "dsm/matcher.hpp"
#include "dsm/metrics.hpp"
#include "dsm/refinement.hpp"
#include "dsm/train.hpp"

namespace {

using namespace dsm;

struct MatchArgs {
  std::string left, right, config, ckpt, out_disp, out_match, out_logscale, heatmap_dir;
};

int run_match(const MatchArgs& a) {
  const MatcherConfig cfg = MatcherConfig::from_file(a.config);
  const ScalarMap left = read_image(a.left);
  const ScalarMap right = read_image(a.right);
  ParamSet params = a.ckpt.empty() ? init_params(cfg, 0) : load_checkpoint(a.ckpt);
  const MatchOutput out = match(left, right, cfg, params);

  write_pfm(a.out_disp, out.d_refined);
  if (!a.out_match.empty()) write_pfm(a.out_match, out.m);
  if (!a.out_logscale.empty()) write_pfm(a.out_logscale, out.logscale);
  if (!a.heatmap_dir.empty()) {
    const double dmax = cfg.disparities - 1;
    const double mmax = std::log(double(cfg.bins()));
    write_pgm_heatmap(a.heatmap_dir + "/d_init.pgm", out.d_init, 0.0, dmax);
    write_pgm_heatmap(a.heatmap_dir + "/d_refined.pgm", out.d_refined, 0.0, dmax);
    write_pgm_heatmap(a.heatmap_dir + "/match.pgm", out.m, 0.0, mmax);
    write_pgm_heatmap(a.heatmap_dir + "/logscale.pgm", out.logscale, -3.0, 6.0);
  }
  return 0;
}

struct EvalArgs {
  std::string pred, gt, logscale;
  double max_disp = 192.0;
  bool csv = false;
};

int run_eval(const EvalArgs& a) {
  const DisparityMap pred = read_pfm(a.pred, MapRole::Disparity);
  const DisparityMap gt = read_pfm(a.gt, MapRole::Disparity);
  if (!sample_filter(gt, a.max_disp)) {
    std::cerr << "error: sample rejected, under 10% valid ground truth\n";
    return 1;
  }
  MetricsReport r;
  if (a.logscale.empty()) {
    r = compute_metrics(pred, gt, a.max_disp);
  } else {
    const LogScaleMap b = read_pfm(a.logscale, MapRole::LogScale);
    r = split_metrics(pred, gt, b, a.max_disp);
  }
  if (a.csv)
    std::cout << metrics_csv_line(r) << "\n";
  else
    std::cout << format_metrics(r);
  return 0;
}

struct TrainArgs {
  std::string config, out, history;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  const TrainConfig cfg = TrainConfig::from_file(a.config);
  const TrainResult res = train(cfg, a.seed, a.out, a.history);
  if (res.diverged) {
    std::cerr << "error: training diverged after " << res.steps
              << " steps; last good parameters kept in " << a.out << "\n";
    return 3;
  }
  for (const EpochStats& st : res.history)
    std::printf("epoch %3d  l1_init %.6f  joint %.6f  l1_ref %.6f  total %.6f  epe %.6f\n",
                st.epoch, st.mean.l1_init, st.mean.joint, st.mean.l1_refined, st.mean.total,
                st.epe);
  return 0;
}

struct RefineArgs {
  std::string disp, left, match, ckpt, config, out;
  int iters = 24;
};

int run_refine(const RefineArgs& a) {
  DisparityMap d = read_pfm(a.disp, MapRole::Disparity);
  ScalarMap left = read_image(a.left);
  MatchabilityMap m = read_pfm(a.match, MapRole::Matchability);
  if (!d.same_shape(left) || !d.same_shape(m))
    throw ArgumentError("refine: input maps must share one shape");

  ParamSet params = load_checkpoint(a.ckpt);
  KernelNet net;
  DisparityMap guide_d = d;
  MatchabilityMap guide_m = m;
  if (!a.config.empty()) {
    const MatcherConfig cfg = MatcherConfig::from_file(a.config);
    net.use_matchability = cfg.kernel_use_matchability;
    for (double& v : guide_d.data) v /= double(cfg.disparities - 1);
    const double mmax = std::log(double(cfg.bins()));
    for (double& v : guide_m.data) v /= mmax;
  }
  net.bind(params);
  const KernelMap kernels =
      normalize_affinities(extract_diffusion_kernels(guide_d, left, guide_m, net));
  write_pfm(a.out, cspn_refine(d, kernels, a.iters));
  return 0;
}

int run_gradcheck(std::string only) {
  if (only == "all") only.clear();
  bool found = false, ok = true;
  for (const GradCheckOp& op : gradcheck_registry()) {
    if (!only.empty() && op.name != only) continue;
    found = true;
    const double err = op.run(0);
    const bool pass = err < op.tolerance;
    ok = ok && pass;
    std::printf("%-22s max rel err %.3e  (tol %.0e)  %s\n", op.name.c_str(), err, op.tolerance,
                pass ? "ok" : "FAIL");
  }
  if (!only.empty() && !found) {
    std::cerr << "error: unknown op '" << only << "'\n";
    return 2;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale deep stereo matchability toolkit"};
  app.require_subcommand(1);

  MatchArgs ma;
  CLI::App* cmd_match = app.add_subcommand("match", "run the matcher on a stereo pair");
  cmd_match->add_option("--left", ma.left, "left image (pgm/ppm/pfm)")->required();
  cmd_match->add_option("--right", ma.right, "right image")->required();
  cmd_match->add_option("--config", ma.config, "matcher config file")->required();
  cmd_match->add_option("--ckpt", ma.ckpt, "parameter checkpoint (default: fresh init, seed 0)");
  cmd_match->add_option("--out-disp", ma.out_disp, "refined disparity PFM")->required();
  cmd_match->add_option("--out-match", ma.out_match, "matchability PFM");
  cmd_match->add_option("--out-logscale", ma.out_logscale, "log-scale PFM");
  cmd_match->add_option("--heatmaps", ma.heatmap_dir, "directory for 8-bit heatmaps");

  EvalArgs ea;
  CLI::App* cmd_eval = app.add_subcommand("eval", "compare a disparity map against ground truth");
  cmd_eval->add_option("--pred", ea.pred, "predicted disparity PFM")->required();
  cmd_eval->add_option("--gt", ea.gt, "ground-truth disparity PFM")->required();
  cmd_eval->add_option("--logscale", ea.logscale, "log-scale PFM for the matchable split");
  cmd_eval->add_option("--max-disp", ea.max_disp, "largest valid ground-truth disparity");
  cmd_eval->add_flag("--csv", ea.csv, "machine-readable one-line output");

  TrainArgs ta;
  CLI::App* cmd_train = app.add_subcommand("train-toy", "train on synthetic pairs");
  cmd_train->add_option("--config", ta.config, "training config file")->required();
  cmd_train->add_option("--seed", ta.seed, "master seed");
  cmd_train->add_option("--out", ta.out, "checkpoint path")->required();
  cmd_train->add_option("--history", ta.history, "per-epoch loss CSV");

  RefineArgs ra;
  CLI::App* cmd_refine = app.add_subcommand("refine", "diffuse a disparity map with the kernel net");
  cmd_refine->add_option("--disp", ra.disp, "input disparity PFM")->required();
  cmd_refine->add_option("--left", ra.left, "guidance image")->required();
  cmd_refine->add_option("--match", ra.match, "matchability PFM")->required();
  cmd_refine->add_option("--ckpt", ra.ckpt, "checkpoint with kernel.* tensors")->required();
  cmd_refine->add_option("--config", ra.config, "matcher config for guidance scaling");
  cmd_refine->add_option("--iters", ra.iters, "diffusion iterations");
  cmd_refine->add_option("--out", ra.out, "refined disparity PFM")->required();

  std::string gc_op;
  CLI::App* cmd_gc = app.add_subcommand("gradcheck", "finite-difference checks for all ops");
  cmd_gc->add_option("--op", gc_op, "check a single op by name");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_match) return run_match(ma);
    if (*cmd_eval) return run_eval(ea);
    if (*cmd_train) return run_train(ta);
    if (*cmd_refine) return run_refine(ra);
    if (*cmd_gc) return run_gradcheck(gc_op);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
