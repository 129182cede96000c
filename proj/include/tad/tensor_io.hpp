#pragma once

#include <string>

#include "tad/tensor.hpp"

namespace tad {

// Binary tensor file: 8 magic bytes "TADTNSR1", then rank and extents as
// 64-bit little-endian unsigned integers, then the elements as 64-bit
// little-endian IEEE doubles in row-major order.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace tad
