#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsm/adam.hpp"
#include "dsm/losses.hpp"
#include "dsm/matcher.hpp"
#include "dsm/params.hpp"
#include "dsm/synthetic.hpp"

namespace dsm {

struct TrainConfig {
  MatcherConfig matcher;
  SyntheticConfig data;
  AdamConfig adam;
  int samples = 8;
  int epochs = 10;
  int max_steps = 0;  // cap on total optimizer steps; 0 = epochs decide
  double lambda_init = 1.0;
  double lambda_joint = 1.0;
  double lambda_refined = 1.0;
  double max_valid_disp = 192.0;
  // Epochs (1-based) after which the learning rate is halved.
  std::vector<int> lr_halve_epochs;

  // key=value text file; every key optional, unknown keys rejected.
  static TrainConfig from_file(const std::string& path);
  void validate() const;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  LossBreakdown mean;
  double epe = 0.0;  // aggregate over the epoch's refined outputs
};

struct TrainResult {
  ParamSet params;
  std::vector<EpochStats> history;
  bool diverged = false;
  int steps = 0;
};

// Minimizes the three-term objective over synthetic pairs with Adam,
// one sample per step, deterministically for a fixed seed. Divergence
// (non-finite loss or gradients) aborts, keeping the last good parameters.
// When paths are given, parameters are checkpointed each epoch and the
// history is written as CSV (epoch,l1_init,joint,l1_ref,total,epe).
TrainResult train(const TrainConfig& cfg, std::uint64_t seed,
                  const std::string& checkpoint_path = "",
                  const std::string& history_path = "");

}  // namespace dsm
