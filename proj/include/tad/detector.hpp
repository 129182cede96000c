#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tad/estf.hpp"
#include "tad/instance.hpp"
#include "tad/tensor.hpp"

namespace tad {

struct DetectorConfig {
  int64_t n_classes = 0;  // foreground classes; one extra background logit
  int64_t n_levels = 4;
  double token_sec = 0.5;  // seconds covered by one level-0 timestep
  // Inner duration bounds (seconds) between consecutive levels; level i keeps
  // instances with duration in [bounds[i-1], bounds[i]), open-ended at the
  // top. Empty -> doubling defaults starting at 4*token_sec.
  std::vector<double> range_bounds;
  double score_thresh = 0.05;  // decode: drop classes scored below this
  bool mean_pool_neck = false;  // mean instead of max when downsampling
  double lambda_reg = 1.0;

  double sigma_sec(int64_t level) const { return token_sec * double(int64_t(1) << level); }
  double tau(int64_t level, int64_t t) const { return (double(t) + 0.5) * sigma_sec(level); }
  // [lo, hi) duration window of a level, hi = +inf for the last
  std::pair<double, double> level_range(int64_t level) const;
  void validate() const;
};

// Strictly halving temporal feature stack; levels[0] is the input sequence.
struct PyramidFeatures {
  std::vector<Tensor> levels;  // [T_i, D], T_i = T_0 / 2^i
};

// [N,D] tokens on a (t,h,w) grid -> [T,D] by averaging each frame's tokens
Tensor spatial_mean(const Tensor& tokens, const TokenGrid& g);

// Halve time n_levels-1 times; T must be divisible by 2^(n_levels-1).
PyramidFeatures build_pyramid(const Tensor& tokens, int64_t n_levels,
                              bool mean_pool = false);

// Shared per-level head: depthwise temporal conv, one hidden layer, then
// class logits [T_i, C+1] and strictly positive offsets [T_i, 2] (softplus,
// measured in units of the level stride).
struct HeadParams {
  Tensor k_time;        // [D, 3]
  Tensor w0, b0;        // [D, D], [D]
  Tensor cls_w, cls_b;  // [D, C+1], [C+1]
  Tensor reg_w, reg_b;  // [D, 2], [2]

  static HeadParams init(int64_t d_model, int64_t n_classes, std::mt19937_64& rng);
  std::vector<std::pair<std::string, Tensor*>> named();
};

struct HeadOutputs {
  std::vector<Tensor> logits;   // per level [T_i, C+1]
  std::vector<Tensor> offsets;  // per level [T_i, 2]
};

HeadOutputs head_forward(const PyramidFeatures& pyr, const HeadParams& p);

// Timestep (level, t) covers seconds tau(level,t); predictions decode as
//   t_start = tau - offsets[0]*sigma, t_end = tau + offsets[1]*sigma,
// clamped to [0, duration]; every non-background class scoring at least
// score_thresh (softmax) emits an instance. t_end > t_start by construction.
std::vector<ActionInstance> decode_instances(const HeadOutputs& out,
                                             const DetectorConfig& cfg,
                                             double duration_sec);

// Per-timestep training targets; cls == n_classes means background.
struct LevelTargets {
  std::vector<int64_t> cls;
  std::vector<double> d_start, d_end;  // stride units, positives only
};

// A timestep is positive for the ground-truth segment that contains its
// center (closed interval) and whose duration lies in the level's range;
// among several, the shortest wins, then input order.
std::vector<LevelTargets> assign_targets(const std::vector<GroundTruthInstance>& gts,
                                         const DetectorConfig& cfg,
                                         const std::vector<int64_t>& level_lens);

struct LossParts {
  Tensor total;        // scalar, taped
  double cls = 0, reg = 0;
  int64_t n_pos = 0;
};

// Focal classification (gamma=2, alpha=0.25 foreground / 0.75 background,
// normalized by max(1, n_pos)) plus mean 1-D distance-IoU on positives.
LossParts detection_loss(const HeadOutputs& out,
                         const std::vector<LevelTargets>& targets,
                         const DetectorConfig& cfg);

// The full network: frozen backbone + adapters + neck + head.
struct TadModel {
  BackboneConfig bcfg;
  EstfConfig acfg;
  DetectorConfig dcfg;
  BackboneParams backbone;
  std::vector<EstfParams> adapters;  // empty = adapters disabled
  HeadParams head;

  static TadModel init(const BackboneConfig& bc, const EstfConfig& ac,
                       const DetectorConfig& dc, uint64_t seed,
                       bool with_adapters = true);
  // trainable tensors only (adapters + head)
  std::vector<std::pair<std::string, Tensor*>> named();
  HeadOutputs forward(const Tensor& tokens) const;  // tokens: patch_embed output
  double duration_sec() const;
};

}  // namespace tad
