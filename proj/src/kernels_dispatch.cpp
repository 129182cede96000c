#include "tad/kernels.hpp"

#include <cstdlib>
#include <cstring>

#include "tad/common.hpp"

namespace tad::kernels {
namespace {

const Ops* select() {
  const char* env = std::getenv("TAD_KERNELS");
  if (env && std::strcmp(env, "scalar") == 0) return &scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
  if (env && std::strcmp(env, "avx2") == 0) {
    if (!avx2_supported()) throw ConfigError("TAD_KERNELS=avx2 but cpu lacks avx2/fma");
    return &avx2_ops();
  }
  if (!env || std::strcmp(env, "auto") == 0)
    return avx2_supported() ? &avx2_ops() : &scalar_ops();
#endif
#if defined(__aarch64__)
  if (env && std::strcmp(env, "neon") == 0) return &neon_ops();
  if (!env || std::strcmp(env, "auto") == 0) return &neon_ops();
#endif
  if (env && std::strcmp(env, "auto") != 0)
    throw ConfigError(std::string("unknown TAD_KERNELS value: ") + env);
  return &scalar_ops();
}

}  // namespace

const Ops& active() {
  static const Ops* ops = select();
  return *ops;
}

const char* active_name() { return active().name; }

}  // namespace tad::kernels

namespace tad {

int worker_threads() {
  static int n = [] {
    const char* env = std::getenv("TAD_THREADS");
    if (!env) return 1;
    int v = std::atoi(env);
    return v < 1 ? 1 : (v > 64 ? 64 : v);
  }();
  return n;
}

}  // namespace tad
