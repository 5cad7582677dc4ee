#pragma once

#include <string>

#include "dsm/volume.hpp"

namespace dsm {

struct MetricsReport {
  double epe = 0.0;
  double pct_gt1 = 0.0;  // fraction of valid pixels with error > 1 px
  double pct_gt3 = 0.0;
  double d1 = 0.0;  // error > 3 px AND > 5% of ground truth
  std::size_t valid_pixels = 0;

  // Filled by split_metrics only.
  bool has_split = false;
  double epe_matchable = 0.0;
  double epe_unmatchable = 0.0;
  std::size_t matchable_pixels = 0;
};

// Accumulates in row-major order with double precision so results are
// reproducible bit for bit. Valid = finite ground truth in [0, max_disp].
MetricsReport compute_metrics(const DisparityMap& pred, const DisparityMap& gt,
                              double max_disp = 192.0);

// Same, plus EPE split by the matchable mask B' < 0.
MetricsReport split_metrics(const DisparityMap& pred, const DisparityMap& gt,
                            const LogScaleMap& logscale, double max_disp = 192.0);

// Rejects samples whose valid-pixel fraction is below 10%.
bool sample_filter(const DisparityMap& gt, double max_disp = 192.0);

std::string format_metrics(const MetricsReport& r);
std::string metrics_csv_line(const MetricsReport& r);

}  // namespace dsm
