#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "tad/kernels.hpp"

using namespace tad;

namespace {

const std::vector<int64_t> kSizes = {1, 2, 3, 4, 5, 7, 8, 15, 16, 17, 63, 64, 100, 1023};

std::vector<double> randv(std::mt19937_64& rng, int64_t n, double lo = -3.0,
                          double hi = 3.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = d(rng);
  return v;
}

// SIMD lanes reassociate sums and fuse multiply-adds, so equality is up to a
// tolerance scaled by the magnitude of the data involved
double tol_for(const std::vector<double>& a) {
  double s = 1.0;
  for (double x : a) s += std::fabs(x);
  return 1e-13 * s;
}

}  // namespace

TEST_CASE("active lane matches scalar reference on elementwise kernels") {
  const auto& ref = kernels::scalar_ops();
  const auto& act = kernels::active();
  std::mt19937_64 rng(11);
  for (int64_t n : kSizes) {
    auto a = randv(rng, n);
    auto b = randv(rng, n);
    std::vector<double> r(static_cast<size_t>(n)), s(static_cast<size_t>(n));

    ref.add(a.data(), b.data(), r.data(), n);
    act.add(a.data(), b.data(), s.data(), n);
    for (int64_t i = 0; i < n; ++i) CHECK(r[size_t(i)] == s[size_t(i)]);

    ref.sub(a.data(), b.data(), r.data(), n);
    act.sub(a.data(), b.data(), s.data(), n);
    for (int64_t i = 0; i < n; ++i) CHECK(r[size_t(i)] == s[size_t(i)]);

    ref.mul(a.data(), b.data(), r.data(), n);
    act.mul(a.data(), b.data(), s.data(), n);
    for (int64_t i = 0; i < n; ++i) CHECK(r[size_t(i)] == s[size_t(i)]);

    ref.scale(a.data(), 1.7, r.data(), n);
    act.scale(a.data(), 1.7, s.data(), n);
    for (int64_t i = 0; i < n; ++i) CHECK(r[size_t(i)] == s[size_t(i)]);

    r = b;
    s = b;
    ref.axpy(-0.9, a.data(), r.data(), n);
    act.axpy(-0.9, a.data(), s.data(), n);
    for (int64_t i = 0; i < n; ++i)
      CHECK(std::fabs(r[size_t(i)] - s[size_t(i)]) <= 1e-14);
  }
}

TEST_CASE("active lane matches scalar reference on reductions") {
  const auto& ref = kernels::scalar_ops();
  const auto& act = kernels::active();
  std::mt19937_64 rng(12);
  for (int64_t n : kSizes) {
    auto a = randv(rng, n);
    auto b = randv(rng, n);
    CHECK(std::fabs(ref.dot(a.data(), b.data(), n) - act.dot(a.data(), b.data(), n)) <=
          tol_for(a));
    CHECK(std::fabs(ref.sum(a.data(), n) - act.sum(a.data(), n)) <= tol_for(a));
    CHECK(ref.max(a.data(), n) == act.max(a.data(), n));
  }
}

TEST_CASE("vectorized exp agrees with libm over its working range") {
  const auto& act = kernels::active();
  std::mt19937_64 rng(13);
  for (int64_t n : kSizes) {
    auto a = randv(rng, n, -60.0, 60.0);
    std::vector<double> out(static_cast<size_t>(n));
    act.vexp(a.data(), out.data(), n);
    for (int64_t i = 0; i < n; ++i) {
      double want = std::exp(a[size_t(i)]);
      CHECK(std::fabs(out[size_t(i)] - want) <= 1e-13 * want);
    }
  }
  // extremes must match libm semantics exactly in kind
  std::vector<double> edge = {-800.0, -709.0, 0.0, 709.0, 800.0,
                              std::numeric_limits<double>::quiet_NaN()};
  std::vector<double> out(edge.size());
  act.vexp(edge.data(), out.data(), int64_t(edge.size()));
  CHECK(out[0] == std::exp(-800.0));
  CHECK(std::fabs(out[1] - std::exp(-709.0)) <= 1e-13 * std::exp(-709.0));
  CHECK(out[2] == 1.0);
  CHECK(std::fabs(out[3] - std::exp(709.0)) <= 1e-13 * std::exp(709.0));
  CHECK(std::isinf(out[4]));
  CHECK(std::isnan(out[5]));
}

TEST_CASE("finite check flags the first bad index") {
  const auto& act = kernels::active();
  for (int64_t n : {int64_t(1), int64_t(5), int64_t(9), int64_t(33)}) {
    std::vector<double> a(size_t(n), 1.0);
    int64_t bad = -1;
    CHECK(act.finite(a.data(), n, &bad));
    for (int64_t where = 0; where < n; ++where) {
      auto v = a;
      v[size_t(where)] = where % 2 ? std::numeric_limits<double>::infinity()
                                   : std::numeric_limits<double>::quiet_NaN();
      bad = -1;
      CHECK_FALSE(act.finite(v.data(), n, &bad));
      CHECK(bad == where);
    }
  }
}

TEST_CASE("scan kernel: active lane matches scalar reference") {
  const auto& ref = kernels::scalar_ops();
  const auto& act = kernels::active();
  std::mt19937_64 rng(14);
  for (int tc = 0; tc < 30; ++tc) {
    std::uniform_int_distribution<int64_t> rt(1, 12), rd(1, 6), rs(1, 9);
    int64_t T = rt(rng), dr = rd(rng), ds = rs(rng);
    auto x = randv(rng, T * dr);
    auto delta = randv(rng, T * dr, 0.01, 2.0);
    auto a = randv(rng, dr * ds, -4.0, -0.05);
    auto bs = randv(rng, T * ds);
    auto cs = randv(rng, T * ds);
    std::vector<double> y1(size_t(T * dr)), y2(size_t(T * dr));
    std::vector<double> hh1(size_t(T * dr * ds)), hh2(size_t(T * dr * ds));
    std::vector<double> h1(size_t(dr * ds), 0.0), h2(size_t(dr * ds), 0.0);
    ref.scan(T, dr, ds, x.data(), delta.data(), a.data(), bs.data(), cs.data(),
             y1.data(), hh1.data(), h1.data());
    act.scan(T, dr, ds, x.data(), delta.data(), a.data(), bs.data(), cs.data(),
             y2.data(), hh2.data(), h2.data());
    for (size_t i = 0; i < y1.size(); ++i)
      CHECK(std::fabs(y1[i] - y2[i]) <= 1e-12 * (1.0 + std::fabs(y1[i])));
    for (size_t i = 0; i < hh1.size(); ++i)
      CHECK(std::fabs(hh1[i] - hh2[i]) <= 1e-12 * (1.0 + std::fabs(hh1[i])));
  }
}

TEST_CASE("kernel selection reports a known lane") {
  std::string name = kernels::active_name();
  CHECK((name == "scalar" || name == "avx2" || name == "neon"));
}
