#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tad {

// Error taxonomy. The CLI maps ShapeError/ConfigError/IoError to exit 1
// (validation) and NumericError to exit 2.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

// Thread count for the few embarrassingly-parallel loops (dataset generation,
// per-video evaluation). Controlled by the TAD_THREADS environment variable;
// defaults to 1 (results are identical for any value by construction).
int worker_threads();

}  // namespace tad
