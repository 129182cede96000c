#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tad/tensor.hpp"

namespace tad {

// How the step size of the scan is produced.
//   selective: per-token, softplus(LN(x) . w_delta + b_delta), shared over
//              channels
//   literal:   fixed at 1, so the transition exp(A) is input-independent
enum class DeltaMode { selective, literal };

struct SsmOptions {
  DeltaMode delta = DeltaMode::selective;
  bool tied_a = false;  // share the forward transition with the backward scan
};

// Diagonal-state selective scan over a batch of sequences.
//   x, delta: [B, T, d_r]   a: [d_r, d_s] continuous transition (negative)
//   bseq, cseq: [B, T, d_s]
// Per step: h_t = exp(delta_t a) h_{t-1} + delta_t b_t x_t, y_t = <c_t, h_t>.
// Differentiable in all five arguments.
Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a,
                      const Tensor& bseq, const Tensor& cseq);

// Same recurrence evaluated by composing per-chunk affine maps
// (h -> P h + q) and folding the chunks, then re-emitting outputs from the
// chunk-boundary states. Used to cross-check the sequential path; no tape.
Tensor selective_scan_chunked(const Tensor& x, const Tensor& delta, const Tensor& a,
                              const Tensor& bseq, const Tensor& cseq, int64_t chunk);

// Bidirectional scan mixer over [B, T, d_r] token sequences. The input is
// layer-normalized, projected to a forward and a backward stream, scanned in
// both time directions with per-direction transitions, and the two streams
// are concatenated and projected back to d_r.
struct TbSsmParams {
  Tensor ln_gamma, ln_beta;     // [d_r]
  Tensor w_in;                  // [d_r, 2 d_r], columns [forward | backward]
  Tensor a_log_fwd, a_log_bwd;  // [d_r, d_s], transition = -exp(a_log)
  Tensor w_bc;                  // [d_r, 2 d_s], shared B/C projection
  Tensor w_delta;               // [d_r, 1]
  Tensor b_delta;               // [1]
  Tensor w_out;                 // [2 d_r, d_r], rows [forward ; backward]

  int64_t d_r = 0, d_s = 0;

  static TbSsmParams init(int64_t d_r, int64_t d_s, std::mt19937_64& rng);
  std::vector<std::pair<std::string, Tensor*>> named();
};

Tensor tb_ssm(const Tensor& x, const TbSsmParams& p, const SsmOptions& opt = {});

// Exact time-reversal counterpart: running tb_ssm with these parameters on a
// flipped input yields the flip of the original output.
TbSsmParams swap_directions(const TbSsmParams& p);

// Single-head softmax attention over the same [B, T, d] layout, the
// quadratic-time baseline for the scaling benchmark and the adapter ablation.
struct AttnParams {
  Tensor wq, wk, wv;  // [d, d_k]
  Tensor wo;          // [d_k, d]
  int64_t d = 0, d_k = 0;

  static AttnParams init(int64_t d, int64_t d_k, std::mt19937_64& rng);
  std::vector<std::pair<std::string, Tensor*>> named();
};

// Materializes the [T, T] score matrix; differentiable.
Tensor attention_mixer(const Tensor& x, const AttnParams& p);
// Row-at-a-time evaluation of the same function, O(T) live memory, no tape.
// Agrees with attention_mixer to rounding error.
Tensor attention_mixer_streaming(const Tensor& x, const AttnParams& p);

}  // namespace tad
