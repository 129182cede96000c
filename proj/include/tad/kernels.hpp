#pragma once

#include <cstddef>
#include <cstdint>

// Low-level numeric kernels. Every entry has a scalar reference
// implementation; SIMD variants (AVX2 on x86, NEON on aarch64) are selected
// once at startup from cpu capabilities and must agree with the scalar
// reference within tight tolerances (see tests/test_kernels.cpp).
// Selection override: TAD_KERNELS=scalar|avx2|neon.

namespace tad::kernels {

struct Ops {
  const char* name;

  void (*add)(const double* a, const double* b, double* out, int64_t n);
  void (*sub)(const double* a, const double* b, double* out, int64_t n);
  void (*mul)(const double* a, const double* b, double* out, int64_t n);
  void (*scale)(const double* a, double c, double* out, int64_t n);
  // y += c * x
  void (*axpy)(double c, const double* x, double* y, int64_t n);
  double (*dot)(const double* a, const double* b, int64_t n);
  double (*sum)(const double* a, int64_t n);
  double (*max)(const double* a, int64_t n);
  void (*vexp)(const double* a, double* out, int64_t n);
  // returns false and sets *bad to the first offending index if any entry
  // is NaN or +-Inf
  bool (*finite)(const double* a, int64_t n, int64_t* bad);

  // Selective-scan recurrence for one (batch, direction) slab.
  //   x, delta: [T, dr] row-major     a: [dr, ds] (continuous-form A)
  //   bseq, cseq: [T, ds]             y: [T, dr] (written)
  //   h_hist: optional [T, dr, ds] full state history (for backward), may be null
  //   h: [dr, ds] scratch, must be zeroed by the caller
  // Per step: abar = exp(delta*a); h = abar*h + delta*b*x; y = <c, h>.
  void (*scan)(int64_t T, int64_t dr, int64_t ds, const double* x,
               const double* delta, const double* a, const double* bseq,
               const double* cseq, double* y, double* h_hist, double* h);
};

const Ops& scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops();
bool avx2_supported();
#endif
#if defined(__aarch64__)
const Ops& neon_ops();
#endif

// Runtime-selected implementation (cached after first call).
const Ops& active();
const char* active_name();

}  // namespace tad::kernels
