#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tad/estf.hpp"
#include "tad/synthdata.hpp"
#include "tad/trainer.hpp"

namespace tad {

struct ScalingConfig {
  std::vector<int64_t> lengths;  // empty: 1024..32768 doubling
  int64_t d_r = 8;
  int64_t d_s = 8;
  int reps = 5;  // median over this many timed runs
  uint64_t seed = 1;
};

struct ScalingRow {
  std::string module;  // tb_ssm | attention
  int64_t t_len = 0;
  double median_ms = 0;
  int64_t peak_bytes = 0;       // op-local allocation high-water mark
  bool timer_limited = false;   // too fast for the clock; excluded from fits
};

struct ScalingReport {
  std::vector<ScalingRow> rows;  // |lengths| x 2, tb_ssm rows first
  double slope_tb_ssm = 0;       // log-log runtime slopes
  double slope_attention = 0;

  std::string csv() const;
};

// Times tb_ssm against the streaming attention baseline on pre-allocated
// [1, T, d_r] inputs, inference mode, single thread.
ScalingReport scan_scaling(const ScalingConfig& cfg = {});

// least-squares slope of log10(y) against log10(x)
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct AblationConfig {
  SynthSpec data;  // defaults to the bundled easy setting
  int64_t d_model = 32;
  int64_t depth = 2;
  int64_t rank = 8;
  int64_t d_state = 4;
  int64_t t_patch = 2, h_patch = 8, w_patch = 8;
  int64_t pool_h = 2, pool_w = 2;
  int64_t n_levels = 4;
  TrainConfig train;
  uint64_t model_seed = 43;
  int64_t bootstrap_samples = 200;
  uint64_t bootstrap_seed = 99;

  AblationConfig();
};

struct AblationRow {
  std::string name;
  double map50 = 0;
  double avg_map = 0;
  bool failed = false;  // training diverged; row kept, metrics meaningless
};

struct AblationReport {
  std::vector<AblationRow> rows;  // 5 component variants then 3 mixer swaps
  // independent-A minus tied-A average mAP on the asymmetric suite, with a
  // percentile bootstrap interval over videos
  double asym_gap = 0;
  double asym_gap_lo = 0;
  double asym_gap_hi = 0;

  std::string markdown() const;
  std::string csv() const;
};

// Trains and evaluates every variant sequentially with a shared seed.
AblationReport ablation_run(const AblationConfig& cfg = {});

}  // namespace tad
