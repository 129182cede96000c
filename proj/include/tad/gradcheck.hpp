#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tad/tensor.hpp"

namespace tad {

// Central-difference check of reverse-mode gradients for a scalar-valued
// function of several tensors. Relative error uses max(|numeric|,
// |analytic|, 1e-6) as the denominator.
struct CheckReport {
  bool pass = false;
  double max_rel = 0.0;
  double max_abs = 0.0;
  int worst_input = -1;
  int64_t worst_flat = -1;
  std::string describe() const;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

CheckReport grad_check(const ScalarFn& f, std::vector<Tensor> inputs,
                       double eps = 1e-5, double tol_rel = 1e-4);

}  // namespace tad
