#pragma once

#include <vector>

#include "tad/tape.hpp"
#include "tad/tensor.hpp"

// Differentiable op library. Every function validates shapes (ShapeError),
// checks outputs for NaN/Inf (NumericError naming the op), and records a
// pullback on the active tape when any input is tracked. No implicit
// broadcasting: use expand() to materialize a broadcast explicitly.
namespace tad::op {

// elementwise, shapes must match exactly
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);  // ties take a's gradient
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);

// a: [..., m, k], b: [k, n] -> [..., m, n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a: [B, m, k], b: [B, k, n] -> [B, m, n]
Tensor bmm(const Tensor& a, const Tensor& b);
// x: [..., C] + v: [C], added to every row
Tensor add_rowvec(const Tensor& x, const Tensor& v);

Tensor reshape(const Tensor& x, Shape s);  // storage-sharing view
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor flip(const Tensor& x, int axis);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
// replicate an extent-1 axis `factor` times
Tensor expand(const Tensor& x, int axis, int64_t factor);

Tensor sum_all(const Tensor& x);   // -> [1]
Tensor mean_all(const Tensor& x);  // -> [1]
Tensor sum_axis(const Tensor& x, int axis);   // removes the axis
Tensor mean_axis(const Tensor& x, int axis);  // removes the axis

// x: [..., C], gamma/beta: [C]; normalizes over the last axis
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);
Tensor softmax_last(const Tensor& x);
Tensor log_softmax_last(const Tensor& x);

// x: [R, C], idx: R entries in [0, C) -> [R]
Tensor select_last(const Tensor& x, const std::vector<int64_t>& idx);
// x: [R, C], rows: P entries in [0, R) -> [P, C]
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows);

// depthwise convs, zero padding, odd kernel sizes
Tensor dwconv1d(const Tensor& x, const Tensor& k);  // [B,T,C] * [C,K]
Tensor dwconv2d(const Tensor& x, const Tensor& k);  // [B,H,W,C] * [C,Kh,Kw]

// x: [T,H,W,C]. Default requires fh|H and fw|W; pad=true zero-pads the
// trailing edge up to a full window first (zeros enter the averages).
Tensor avgpool_spatial(const Tensor& x, int64_t fh, int64_t fw, bool pad = false);
Tensor upsample_nearest(const Tensor& x, int64_t fh, int64_t fw);  // [T,h,w,C]
// x: [T,C], window 2 stride 2, T even; ties take the earlier timestep
Tensor maxpool_time(const Tensor& x);

}  // namespace tad::op
