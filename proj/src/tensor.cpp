#include "tad/tensor.hpp"

#include <sstream>

#include "tad/kernels.hpp"

namespace tad {

Precision Engine::precision = Precision::f64;

std::atomic<int64_t> AllocStats::current_bytes{0};
std::atomic<int64_t> AllocStats::peak_bytes{0};

void AllocStats::reset_peak() { peak_bytes.store(current_bytes.load()); }
int64_t AllocStats::current() { return current_bytes.load(); }
int64_t AllocStats::peak() { return peak_bytes.load(); }

namespace detail {

HeapArray::HeapArray(int64_t count) : n(count) {
  if (count < 0) throw ShapeError("negative allocation size");
  p = new double[size_t(count)];
  int64_t bytes = count * int64_t(sizeof(double));
  int64_t cur = AllocStats::current_bytes.fetch_add(bytes) + bytes;
  int64_t peak = AllocStats::peak_bytes.load();
  while (cur > peak && !AllocStats::peak_bytes.compare_exchange_weak(peak, cur)) {
  }
}

HeapArray::~HeapArray() {
  if (p) {
    AllocStats::current_bytes.fetch_sub(n * int64_t(sizeof(double)));
    delete[] p;
  }
}

}  // namespace detail

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

static void check_shape(const Shape& s) {
  for (int64_t e : s)
    if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
}

Tensor Tensor::zeros(Shape s) {
  check_shape(s);
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(s);
  int64_t n = shape_numel(t.impl_->shape);
  t.impl_->data = std::make_shared<detail::HeapArray>(n);
  std::memset(t.impl_->data->p, 0, size_t(n) * sizeof(double));
  return t;
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t = zeros(std::move(s));
  double* p = t.impl_->data->p;
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = v;
  return t;
}

Tensor Tensor::from_data(Shape s, std::vector<double> v) {
  check_shape(s);
  if (shape_numel(s) != int64_t(v.size()))
    throw ShapeError("data size " + std::to_string(v.size()) + " does not match shape " +
                     shape_str(s));
  Tensor t = zeros(std::move(s));
  std::memcpy(t.impl_->data->p, v.data(), v.size() * sizeof(double));
  return t;
}

Tensor Tensor::view_reshape(const Tensor& src, Shape s) {
  check_shape(s);
  if (shape_numel(s) != src.numel())
    throw ShapeError("reshape " + shape_str(src.shape()) + " -> " + shape_str(s) +
                     " changes element count");
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(s);
  t.impl_->data = src.impl_->data;
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data->p[0];
}

double Tensor::at(const std::vector<int64_t>& idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) throw ShapeError("index rank mismatch");
  int64_t flat = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= s[i]) throw ShapeError("index out of range");
    flat = flat * s[i] + idx[i];
  }
  return impl_->data->p[flat];
}

Tensor Tensor::grad_tensor() const {
  if (!impl_->grad) return Tensor();
  Tensor g = zeros(shape());
  std::memcpy(g.mut_data(), impl_->grad->p, size_t(numel()) * sizeof(double));
  return g;
}

void Tensor::zero_grad() { impl_->grad.reset(); }

void Tensor::accumulate_grad(const double* g, int64_t n) {
  if (n != numel()) throw ShapeError("gradient size mismatch");
  if (!impl_->grad) {
    impl_->grad = std::make_unique<detail::HeapArray>(n);
    std::memcpy(impl_->grad->p, g, size_t(n) * sizeof(double));
  } else {
    kernels::active().axpy(1.0, g, impl_->grad->p, n);
  }
}

Tensor Tensor::clone() const {
  Tensor t = zeros(shape());
  std::memcpy(t.mut_data(), data(), size_t(numel()) * sizeof(double));
  return t;
}

void seal_output(Tensor& t, const char* op) {
  double* p = t.mut_data();
  int64_t n = t.numel();
  if (Engine::precision == Precision::f32) {
    for (int64_t i = 0; i < n; ++i) p[i] = double(float(p[i]));
  }
  int64_t bad = -1;
  if (!kernels::active().finite(p, n, &bad))
    throw NumericError(std::string(op) + ": non-finite value at flat index " +
                       std::to_string(bad));
}

Tensor randn(std::mt19937_64& rng, Shape s, double stddev) {
  std::normal_distribution<double> d(0.0, stddev);
  Tensor t = Tensor::zeros(std::move(s));
  double* p = t.mut_data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = d(rng);
  return t;
}

}  // namespace tad
