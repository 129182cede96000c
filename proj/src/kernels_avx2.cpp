#include "tad/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <cstring>

namespace tad::kernels {
namespace {

// ---- 4-lane exp, Cephes-style rational approximation ----------------------
// exp(x) = 2^n * (1 + 2*px/(qx - px)) with r = x - n*ln2 split in two parts.
// Matches std::exp to ~1-2 ulp over the clamped range [-708, 708].

const __m256d kLog2E = _mm256_set1_pd(1.4426950408889634073599);
const __m256d kC1 = _mm256_set1_pd(6.93145751953125e-1);
const __m256d kC2 = _mm256_set1_pd(1.42860682030941723212e-6);
const __m256d kP0 = _mm256_set1_pd(1.26177193074810590878e-4);
const __m256d kP1 = _mm256_set1_pd(3.02994407707441961300e-2);
const __m256d kP2 = _mm256_set1_pd(9.99999999999999999910e-1);
const __m256d kQ0 = _mm256_set1_pd(3.00198505138664455042e-6);
const __m256d kQ1 = _mm256_set1_pd(2.52448340349684104192e-3);
const __m256d kQ2 = _mm256_set1_pd(2.27265548208155028766e-1);
const __m256d kQ3 = _mm256_set1_pd(2.00000000000000000005e0);
const __m256d kExpLo = _mm256_set1_pd(-708.0);
const __m256d kExpHi = _mm256_set1_pd(708.0);

inline __m256d exp4(__m256d x) {
  x = _mm256_min_pd(_mm256_max_pd(x, kExpLo), kExpHi);
  __m256d n = _mm256_round_pd(_mm256_mul_pd(x, kLog2E),
                              _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, kC1, x);
  r = _mm256_fnmadd_pd(n, kC2, r);
  __m256d rr = _mm256_mul_pd(r, r);
  __m256d px = _mm256_fmadd_pd(kP0, rr, kP1);
  px = _mm256_fmadd_pd(px, rr, kP2);
  px = _mm256_mul_pd(px, r);
  __m256d qx = _mm256_fmadd_pd(kQ0, rr, kQ1);
  qx = _mm256_fmadd_pd(qx, rr, kQ2);
  qx = _mm256_fmadd_pd(qx, rr, kQ3);
  __m256d e = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  e = _mm256_fmadd_pd(_mm256_set1_pd(2.0), e, _mm256_set1_pd(1.0));
  // scale by 2^n via exponent bits; n in [-1022, 1023] after clamping
  __m128i ni = _mm256_cvtpd_epi32(n);
  __m256i nl = _mm256_cvtepi32_epi64(ni);
  nl = _mm256_add_epi64(nl, _mm256_set1_epi64x(1023));
  nl = _mm256_slli_epi64(nl, 52);
  return _mm256_mul_pd(e, _mm256_castsi256_pd(nl));
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

// ---- elementwise ----------------------------------------------------------

void v_add(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* out, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void v_scale(const double* a, double c, double* out, int64_t n) {
  const __m256d cv = _mm256_set1_pd(c);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), cv));
  for (; i < n; ++i) out[i] = a[i] * c;
}

void v_axpy(double c, const double* x, double* y, int64_t n) {
  const __m256d cv = _mm256_set1_pd(c);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(
        y + i, _mm256_fmadd_pd(cv, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += c * x[i];
}

double v_dot(const double* a, const double* b, int64_t n) {
  __m256d acc = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double r = hsum(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

double v_sum(const double* a, int64_t n) {
  __m256d acc = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double r = hsum(acc);
  for (; i < n; ++i) r += a[i];
  return r;
}

double v_max(const double* a, int64_t n) {
  double m = a[0];
  int64_t i = 0;
  if (n >= 4) {
    __m256d mv = _mm256_loadu_pd(a);
    for (i = 4; i + 4 <= n; i += 4) mv = _mm256_max_pd(mv, _mm256_loadu_pd(a + i));
    double tmp[4];
    _mm256_storeu_pd(tmp, mv);
    m = tmp[0];
    for (int k = 1; k < 4; ++k)
      if (tmp[k] > m) m = tmp[k];
  }
  for (; i < n; ++i)
    if (a[i] > m) m = a[i];
  return m;
}

void v_vexp(const double* a, double* out, int64_t n) {
  const __m256d sign_clear = _mm256_set1_pd(-0.0);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d x = _mm256_loadu_pd(a + i);
    _mm256_storeu_pd(out + i, exp4(x));
    // lanes past the polynomial range (and NaN) defer to libm so 0/inf/NaN
    // behavior matches the scalar kernel exactly
    __m256d absx = _mm256_andnot_pd(sign_clear, x);
    __m256d oob = _mm256_cmp_pd(absx, kExpHi, _CMP_NLE_UQ);
    if (!_mm256_testz_pd(oob, oob)) {
      for (int k = 0; k < 4; ++k)
        if (!(std::fabs(a[i + k]) <= 708.0)) out[i + k] = std::exp(a[i + k]);
    }
  }
  for (; i < n; ++i) out[i] = std::exp(a[i]);
}

bool v_finite(const double* a, int64_t n, int64_t* bad) {
  // exponent bits all ones <=> inf or nan
  const __m256i mask = _mm256_set1_epi64x(0x7ff0000000000000ll);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256i v = _mm256_castpd_si256(_mm256_loadu_pd(a + i));
    __m256i e = _mm256_and_si256(v, mask);
    if (!_mm256_testz_si256(_mm256_cmpeq_epi64(e, mask),
                            _mm256_cmpeq_epi64(e, mask))) {
      for (int64_t k = i; k < i + 4; ++k)
        if (!std::isfinite(a[k])) {
          if (bad) *bad = k;
          return false;
        }
    }
  }
  for (; i < n; ++i)
    if (!std::isfinite(a[i])) {
      if (bad) *bad = i;
      return false;
    }
  return true;
}

void v_scan(int64_t T, int64_t dr, int64_t ds, const double* x,
            const double* delta, const double* a, const double* bseq,
            const double* cseq, double* y, double* h_hist, double* h) {
  const int64_t ds4 = ds & ~int64_t(3);
  for (int64_t t = 0; t < T; ++t) {
    const double* bt = bseq + t * ds;
    const double* ct = cseq + t * ds;
    for (int64_t d = 0; d < dr; ++d) {
      const double dt = delta[t * dr + d];
      const double xv = x[t * dr + d];
      const double bx = dt * xv;
      const double* ad = a + d * ds;
      double* hd = h + d * ds;
      const __m256d dtv = _mm256_set1_pd(dt);
      const __m256d bxv = _mm256_set1_pd(bx);
      __m256d accv = _mm256_setzero_pd();
      int64_t s = 0;
      for (; s < ds4; s += 4) {
        __m256d abar = exp4(_mm256_mul_pd(dtv, _mm256_loadu_pd(ad + s)));
        __m256d hv = _mm256_loadu_pd(hd + s);
        hv = _mm256_fmadd_pd(abar, hv,
                             _mm256_mul_pd(bxv, _mm256_loadu_pd(bt + s)));
        _mm256_storeu_pd(hd + s, hv);
        accv = _mm256_fmadd_pd(_mm256_loadu_pd(ct + s), hv, accv);
      }
      double acc = hsum(accv);
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

const Ops& avx2_ops() {
  static const Ops ops = {
      "avx2", v_add, v_sub, v_mul,   v_scale,  v_axpy,
      v_dot,  v_sum, v_max, v_vexp, v_finite, v_scan,
  };
  return ops;
}

bool avx2_supported() {
#if defined(__GNUC__) || defined(__clang__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

}  // namespace tad::kernels

#endif  // x86_64
