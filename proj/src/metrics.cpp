#include "dsm/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "dsm/common.hpp"

namespace dsm {

namespace {

bool valid_gt(double g, double max_disp) { return std::isfinite(g) && g >= 0.0 && g <= max_disp; }

}  // namespace

MetricsReport compute_metrics(const DisparityMap& pred, const DisparityMap& gt, double max_disp) {
  if (!pred.same_shape(gt)) throw ArgumentError("metrics: prediction/ground-truth shape mismatch");
  if (pred.empty()) throw ArgumentError("metrics: empty maps");
  MetricsReport r;
  double err_sum = 0.0;
  std::size_t n = 0, gt1 = 0, gt3 = 0, d1 = 0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const double g = gt.data[i];
    if (!valid_gt(g, max_disp)) continue;
    const double e = std::abs(pred.data[i] - g);
    err_sum += e;
    ++n;
    if (e > 1.0) ++gt1;
    if (e > 3.0) ++gt3;
    if (e > 3.0 && e > 0.05 * g) ++d1;
  }
  if (n == 0) throw DegenerateInputError("metrics: no valid ground-truth pixels");
  r.epe = err_sum / double(n);
  r.pct_gt1 = double(gt1) / double(n);
  r.pct_gt3 = double(gt3) / double(n);
  r.d1 = double(d1) / double(n);
  r.valid_pixels = n;
  return r;
}

MetricsReport split_metrics(const DisparityMap& pred, const DisparityMap& gt,
                            const LogScaleMap& logscale, double max_disp) {
  if (!logscale.same_shape(gt)) throw ArgumentError("metrics: log-scale map shape mismatch");
  MetricsReport r = compute_metrics(pred, gt, max_disp);
  double sum_m = 0.0, sum_u = 0.0;
  std::size_t n_m = 0, n_u = 0;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const double g = gt.data[i];
    if (!valid_gt(g, max_disp)) continue;
    const double e = std::abs(pred.data[i] - g);
    if (logscale.data[i] < 0.0) {
      sum_m += e;
      ++n_m;
    } else {
      sum_u += e;
      ++n_u;
    }
  }
  r.has_split = true;
  r.epe_matchable = n_m ? sum_m / double(n_m) : 0.0;
  r.epe_unmatchable = n_u ? sum_u / double(n_u) : 0.0;
  r.matchable_pixels = n_m;
  return r;
}

bool sample_filter(const DisparityMap& gt, double max_disp) {
  if (gt.empty()) return false;
  std::size_t n = 0;
  for (double g : gt.data)
    if (valid_gt(g, max_disp)) ++n;
  return double(n) >= 0.10 * double(gt.data.size());
}

std::string format_metrics(const MetricsReport& r) {
  char buf[512];
  int len = std::snprintf(buf, sizeof buf,
                          "EPE      %10.4f px\n"
                          ">1px     %10.2f %%\n"
                          ">3px     %10.2f %%\n"
                          "D1       %10.2f %%\n"
                          "valid    %10zu px\n",
                          r.epe, 100.0 * r.pct_gt1, 100.0 * r.pct_gt3, 100.0 * r.d1,
                          r.valid_pixels);
  std::string s(buf, len);
  if (r.has_split) {
    len = std::snprintf(buf, sizeof buf,
                        "EPE m    %10.4f px  (%zu px matchable)\n"
                        "EPE u    %10.4f px\n",
                        r.epe_matchable, r.matchable_pixels, r.epe_unmatchable);
    s.append(buf, len);
  }
  return s;
}

std::string metrics_csv_line(const MetricsReport& r) {
  char buf[512];
  int len;
  if (r.has_split)
    len = std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%zu,%.17g,%.17g,%zu", r.epe,
                        r.pct_gt1, r.pct_gt3, r.d1, r.valid_pixels, r.epe_matchable,
                        r.epe_unmatchable, r.matchable_pixels);
  else
    len = std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%zu", r.epe, r.pct_gt1,
                        r.pct_gt3, r.d1, r.valid_pixels);
  return std::string(buf, len);
}

}  // namespace dsm
