#pragma once

#include <atomic>
#include <cstring>
#include <memory>
#include <random>
#include <vector>

#include "tad/common.hpp"

namespace tad {

// Global scalar mode. f64 is mandatory for tests and gradient checks; f32
// rounds every op's forward output through IEEE float32 (train/bench only).
enum class Precision { f64, f32 };

struct Engine {
  static Precision precision;
};

// Byte counters over tensor storage, used by the benchmark harness.
struct AllocStats {
  static std::atomic<int64_t> current_bytes;
  static std::atomic<int64_t> peak_bytes;
  static void reset_peak();
  static int64_t current();
  static int64_t peak();
};

namespace detail {
struct HeapArray {
  double* p = nullptr;
  int64_t n = 0;
  HeapArray() = default;
  explicit HeapArray(int64_t count);
  ~HeapArray();
  HeapArray(const HeapArray&) = delete;
  HeapArray& operator=(const HeapArray&) = delete;
};
}  // namespace detail

// Dense row-major n-d array of doubles. Value-semantic handle: copies share
// storage. Mutation is limited to construction, gradient accumulation and
// the optimizer update path (mut_data).
class Tensor {
 public:
  struct Impl {
    Shape shape;
    std::shared_ptr<detail::HeapArray> data;
    bool requires_grad = false;
    std::unique_ptr<detail::HeapArray> grad;
    // tape bookkeeping: which tape (by id) this tensor is registered with
    std::uint64_t tape_id = 0;
    std::int32_t node = -1;
  };

  Tensor() = default;

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor from_data(Shape s, std::vector<double> v);
  static Tensor scalar(double v) { return full({1}, v); }
  // Shares storage with `src`; numel must match.
  static Tensor view_reshape(const Tensor& src, Shape s);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return impl_->data->n; }
  int64_t rank() const { return int64_t(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[size_t(i)]; }

  const double* data() const { return impl_->data->p; }
  double* mut_data() { return impl_->data->p; }
  double item() const;
  double at(const std::vector<int64_t>& idx) const;

  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }
  bool requires_grad() const { return impl_->requires_grad; }

  bool has_grad() const { return impl_->grad != nullptr; }
  const double* grad_data() const { return impl_->grad ? impl_->grad->p : nullptr; }
  Tensor grad_tensor() const;  // copy of grad as a tensor; undefined handle if absent
  void zero_grad();
  void accumulate_grad(const double* g, int64_t n);

  Tensor clone() const;  // deep copy of values only

  std::shared_ptr<Impl> impl_;
};

// Applied to every op output: NaN/Inf detection (throws NumericError naming
// the op and flat index) and float32 rounding when the engine is in f32 mode.
void seal_output(Tensor& t, const char* op);

// fresh tensor of N(0, stddev^2) draws
Tensor randn(std::mt19937_64& rng, Shape s, double stddev);

}  // namespace tad
