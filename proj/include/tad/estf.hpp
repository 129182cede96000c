#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tad/ssm.hpp"
#include "tad/tensor.hpp"

namespace tad {

// Post-patch token grid: tokens laid out row-major as [t][h][w].
struct TokenGrid {
  int64_t t = 0, h = 0, w = 0;
  int64_t numel() const { return t * h * w; }
};

// How the pooled temporal stream re-enters the spatial branch.
//   canonical: upsample the pooled-and-mixed stream back to full resolution
//   literal:   feed the pre-pool temporal features straight in (already
//              full resolution, so no upsampling happens)
enum class FusionMode { canonical, literal };

// Sequence mixer applied to the pooled temporal stream.
enum class TemporalMixer { tbssm, attention, none };

struct EstfConfig {
  int64_t d_model = 0;  // token channels D
  int64_t rank = 0;     // reduced channels D_r, must be < d_model
  int64_t d_state = 4;  // scan state size per channel
  int64_t pool_h = 2, pool_w = 2;
  int64_t k_spatial = 3, k_temporal = 3;  // odd kernel sizes
  SsmOptions ssm;
  FusionMode fusion = FusionMode::canonical;
  TemporalMixer mixer = TemporalMixer::tbssm;
  // Ablation toggles. cross_fusion=false keeps both branches but cuts the
  // feature exchange between them, so they run in parallel.
  bool spatial_branch = true;
  bool temporal_branch = true;
  bool cross_fusion = true;

  void validate(const TokenGrid& g) const;  // ConfigError on violation
};

// Adapter weights. w_up starts at zero so a freshly built adapter is an
// exact no-op on top of the frozen network.
struct EstfParams {
  Tensor w_down;                  // [D, D_r]
  Tensor w_up;                    // [D_r, D], zero at init
  Tensor k_spatial1, k_spatial2;  // [D_r, K, K] depthwise
  Tensor k_temporal;              // [D_r, K] depthwise
  TbSsmParams ssm;
  AttnParams attn;  // sized only when cfg.mixer == attention

  static EstfParams init(const EstfConfig& cfg, std::mt19937_64& rng);
  std::vector<std::pair<std::string, Tensor*>> named();
  int64_t numel() const;
};

// The adapter residual: callers add the result to their input themselves.
//   x: [N, D] with N = g.numel()
// Down-projects to the grid, runs the spatial conv branch and the pooled
// temporal mixer branch with cross-feeding, sums branch outputs with the
// down-projected input, and up-projects back to D.
Tensor estf_forward(const Tensor& x, const EstfParams& p, const TokenGrid& g,
                    const EstfConfig& cfg);

// Frozen host network: patch embedding plus a stack of residual pointwise
// MLP blocks standing in for a pretrained video transformer.
struct BackboneConfig {
  int64_t depth = 2;    // block count L
  int64_t d_model = 0;  // D
  int64_t t_patch = 1, h_patch = 1, w_patch = 1;
  int64_t frames = 0, height = 0, width = 0, channels_in = 0;

  TokenGrid grid() const;      // ConfigError listing padding if not divisible
  int64_t patch_len() const { return t_patch * h_patch * w_patch * channels_in; }
};

struct BackboneParams {
  Tensor w_patch;  // [patch_len, D]
  Tensor e_pos;    // [N, D]
  struct Block {
    Tensor ln_gamma, ln_beta;  // [D]
    Tensor w1, b1;             // [D, 2D], [2D]
    Tensor w2, b2;             // [2D, D], [D]
  };
  std::vector<Block> blocks;

  // Weights are random then frozen: requires_grad is never set, so no
  // gradient is ever accumulated into them.
  static BackboneParams init(const BackboneConfig& cfg, std::mt19937_64& rng);
  std::vector<const Tensor*> all() const;
  std::vector<std::pair<std::string, Tensor*>> named();
  int64_t numel() const;
};

// video: [T, H, W, D_in] -> tokens [N, D]. Runs untaped: everything in it
// precedes the first trainable parameter.
Tensor patch_embed(const Tensor& video, const BackboneConfig& cfg,
                   const BackboneParams& p);

// Per block: X = X + mlp(LN(X)), then X = X + adapter(X) when an adapter is
// attached. `adapters` must be empty (frozen-only forward) or one per block.
Tensor backbone_forward(const Tensor& x, const BackboneParams& bb,
                        const std::vector<EstfParams>& adapters,
                        const EstfConfig& acfg, const TokenGrid& g);

struct ParamCount {
  int64_t trainable = 0, total = 0;
  double ratio() const { return total ? double(trainable) / double(total) : 0.0; }
};
ParamCount count_params(const BackboneParams& bb,
                        const std::vector<EstfParams>& adapters);

}  // namespace tad
