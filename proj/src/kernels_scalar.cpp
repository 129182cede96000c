#include "tad/kernels.hpp"

#include <cmath>

namespace tad::kernels {
namespace {

void s_add(const double* a, const double* b, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void s_scale(const double* a, double c, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * c;
}

void s_axpy(double c, const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += c * x[i];
}

double s_dot(const double* a, const double* b, int64_t n) {
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double s_sum(const double* a, int64_t n) {
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

double s_max(const double* a, int64_t n) {
  double m = a[0];
  for (int64_t i = 1; i < n; ++i)
    if (a[i] > m) m = a[i];
  return m;
}

void s_vexp(const double* a, double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = std::exp(a[i]);
}

bool s_finite(const double* a, int64_t n, int64_t* bad) {
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(a[i])) {
      if (bad) *bad = i;
      return false;
    }
  }
  return true;
}

void s_scan(int64_t T, int64_t dr, int64_t ds, const double* x,
            const double* delta, const double* a, const double* bseq,
            const double* cseq, double* y, double* h_hist, double* h) {
  for (int64_t t = 0; t < T; ++t) {
    const double* bt = bseq + t * ds;
    const double* ct = cseq + t * ds;
    for (int64_t d = 0; d < dr; ++d) {
      const double dt = delta[t * dr + d];
      const double bx = dt * x[t * dr + d];
      const double* ad = a + d * ds;
      double* hd = h + d * ds;
      double acc = 0.0;
      for (int64_t s = 0; s < ds; ++s) {
        const double abar = std::exp(dt * ad[s]);
        hd[s] = abar * hd[s] + bx * bt[s];
        acc += ct[s] * hd[s];
      }
      y[t * dr + d] = acc;
    }
    if (h_hist) {
      double* dst = h_hist + t * dr * ds;
      for (int64_t i = 0; i < dr * ds; ++i) dst[i] = h[i];
    }
  }
}

}  // namespace

const Ops& scalar_ops() {
  static const Ops ops = {
      "scalar", s_add, s_sub, s_mul,   s_scale,  s_axpy,
      s_dot,    s_sum, s_max, s_vexp, s_finite, s_scan,
  };
  return ops;
}

}  // namespace tad::kernels
