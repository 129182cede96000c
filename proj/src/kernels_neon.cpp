#include "tad/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

#include <cmath>
#include <cstring>

namespace tad::kernels {
namespace {

// 2-lane double kernels. Transcendentals stay on libm per lane; the win here
// is the fused arithmetic, which dominates outside of exp.

void n_add(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void n_sub(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void n_mul(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void n_scale(const double* a, double c, double* out, int64_t n) {
  const float64x2_t cv = vdupq_n_f64(c);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), cv));
  for (; i < n; ++i) out[i] = a[i] * c;
}

void n_axpy(double c, const double* x, double* y, int64_t n) {
  const float64x2_t cv = vdupq_n_f64(c);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), cv, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += c * x[i];
}

double n_dot(const double* a, const double* b, int64_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2)
    acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
  double r = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

double n_sum(const double* a, int64_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  int64_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(a + i));
  double r = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
  for (; i < n; ++i) r += a[i];
  return r;
}

double n_max(const double* a, int64_t n) {
  double m = a[0];
  for (int64_t i = 1; i < n; ++i)
    if (a[i] > m) m = a[i];
  return m;
}

void n_vexp(const double* a, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = std::exp(a[i]);
}

bool n_finite(const double* a, int64_t n, int64_t* bad) {
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite(a[i])) {
      if (bad) *bad = i;
      return false;
    }
  return true;
}

void n_scan(int64_t T, int64_t dr, int64_t ds, const double* x,
            const double* delta, const double* a, const double* bseq,
            const double* cseq, double* y, double* h_hist, double* h) {
  const int64_t ds2 = ds & ~int64_t(1);
  for (int64_t t = 0; t < T; ++t) {
    const double* bt = bseq + t * ds;
    const double* ct = cseq + t * ds;
    for (int64_t d = 0; d < dr; ++d) {
      const double dt = delta[t * dr + d];
      const double bx = dt * x[t * dr + d];
      const double* ad = a + d * ds;
      double* hd = h + d * ds;
      const float64x2_t bxv = vdupq_n_f64(bx);
      float64x2_t accv = vdupq_n_f64(0.0);
      int64_t s = 0;
      for (; s < ds2; s += 2) {
        float64x2_t abar =
            {std::exp(dt * ad[s]), std::exp(dt * ad[s + 1])};
        float64x2_t hv = vld1q_f64(hd + s);
        hv = vfmaq_f64(vmulq_f64(bxv, vld1q_f64(bt + s)), abar, hv);
        vst1q_f64(hd + s, hv);
        accv = vfmaq_f64(accv, vld1q_f64(ct + s), hv);
      }
      double acc = vgetq_lane_f64(accv, 0) + vgetq_lane_f64(accv, 1);
      for (; s < ds; ++s) {
        const double abar = std::exp(dt * ad[s]);
        hd[s] = abar * hd[s] + bx * bt[s];
        acc += ct[s] * hd[s];
      }
      y[t * dr + d] = acc;
    }
    if (h_hist) std::memcpy(h_hist + t * dr * ds, h, sizeof(double) * dr * ds);
  }
}

}  // namespace

const Ops& neon_ops() {
  static const Ops ops = {
      "neon", n_add, n_sub, n_mul,   n_scale,  n_axpy,
      n_dot,  n_sum, n_max, n_vexp, n_finite, n_scan,
  };
  return ops;
}

}  // namespace tad::kernels

#endif  // __aarch64__
