#include "tad/ops.hpp"

#include <cmath>
#include <cstring>

#include "tad/kernels.hpp"

namespace tad::op {

namespace {

using kernels::active;

void same_shape(const Tensor& a, const Tensor& b, const char* opn) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(opn) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

void rec(Tensor& out, std::vector<Tensor> ins, Tape::BackFn fn) {
  Tape* tp = current_tape();
  if (!tp) return;
  bool any = false;
  for (const Tensor& t : ins)
    if (tp->tracked(t)) any = true;
  if (!any) return;
  tp->record(out, ins, std::move(fn));
}

// flat loop bounds around `axis`: x viewed as [outer, extent, inner]
struct AxisSplit {
  int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis, const char* opn) {
  if (axis < 0 || size_t(axis) >= s.size())
    throw ShapeError(std::string(opn) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(s));
  AxisSplit a;
  for (int i = 0; i < axis; ++i) a.outer *= s[size_t(i)];
  a.extent = s[size_t(axis)];
  for (size_t i = size_t(axis) + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

int64_t last_extent(const Tensor& t, const char* opn) {
  if (t.rank() < 1) throw ShapeError(std::string(opn) + ": rank-0 tensor");
  return t.dim(int(t.rank()) - 1);
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  active().add(a.data(), b.data(), out.mut_data(), a.numel());
  seal_output(out, "add");
  rec(out, {a, b},
      [](const Tensor& g, const std::vector<char>& need, std::vector<Tensor>& gin) {
        if (need[0]) gin[0] = g.clone();
        if (need[1]) gin[1] = g.clone();
      });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  active().sub(a.data(), b.data(), out.mut_data(), a.numel());
  seal_output(out, "sub");
  rec(out, {a, b},
      [](const Tensor& g, const std::vector<char>& need, std::vector<Tensor>& gin) {
        if (need[0]) gin[0] = g.clone();
        if (need[1]) {
          gin[1] = Tensor::zeros(g.shape());
          active().scale(g.data(), -1.0, gin[1].mut_data(), g.numel());
        }
      });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  active().mul(a.data(), b.data(), out.mut_data(), a.numel());
  seal_output(out, "mul");
  rec(out, {a, b},
      [a, b](const Tensor& g, const std::vector<char>& need, std::vector<Tensor>& gin) {
        if (need[0]) {
          gin[0] = Tensor::zeros(g.shape());
          active().mul(g.data(), b.data(), gin[0].mut_data(), g.numel());
        }
        if (need[1]) {
          gin[1] = Tensor::zeros(g.shape());
          active().mul(g.data(), a.data(), gin[1].mut_data(), g.numel());
        }
      });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "div");
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.mut_data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] / pb[i];
  seal_output(out, "div");
  rec(out, {a, b},
      [b, out](const Tensor& g, const std::vector<char>& need, std::vector<Tensor>& gin) {
        int64_t n = g.numel();
        if (need[0]) {
          gin[0] = Tensor::zeros(g.shape());
          double* p = gin[0].mut_data();
          for (int64_t i = 0; i < n; ++i) p[i] = g.data()[i] / b.data()[i];
        }
        if (need[1]) {
          gin[1] = Tensor::zeros(g.shape());
          double* p = gin[1].mut_data();
          for (int64_t i = 0; i < n; ++i)
            p[i] = -g.data()[i] * out.data()[i] / b.data()[i];
        }
      });
  return out;
}

static Tensor min_max_impl(const Tensor& a, const Tensor& b, bool take_min) {
  same_shape(a, b, take_min ? "minimum" : "maximum");
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.mut_data();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i)
    po[i] = take_min ? (pa[i] <= pb[i] ? pa[i] : pb[i])
                     : (pa[i] >= pb[i] ? pa[i] : pb[i]);
  seal_output(out, take_min ? "minimum" : "maximum");
  rec(out, {a, b},
      [a, b, take_min](const Tensor& g, const std::vector<char>& need,
                       std::vector<Tensor>& gin) {
        int64_t n = g.numel();
        if (need[0]) gin[0] = Tensor::zeros(g.shape());
        if (need[1]) gin[1] = Tensor::zeros(g.shape());
        for (int64_t i = 0; i < n; ++i) {
          bool a_wins = take_min ? (a.data()[i] <= b.data()[i])
                                 : (a.data()[i] >= b.data()[i]);
          if (a_wins) {
            if (need[0]) gin[0].mut_data()[i] = g.data()[i];
          } else {
            if (need[1]) gin[1].mut_data()[i] = g.data()[i];
          }
        }
      });
  return out;
}

Tensor minimum(const Tensor& a, const Tensor& b) { return min_max_impl(a, b, true); }
Tensor maximum(const Tensor& a, const Tensor& b) { return min_max_impl(a, b, false); }

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  active().scale(a.data(), c, out.mut_data(), a.numel());
  seal_output(out, "scale");
  rec(out, {a},
      [c](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(g.shape());
        active().scale(g.data(), c, gin[0].mut_data(), g.numel());
      });
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = a.clone();
  double* p = out.mut_data();
  for (int64_t i = 0; i < out.numel(); ++i) p[i] += c;
  seal_output(out, "add_scalar");
  rec(out, {a},
      [](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        gin[0] = g.clone();
      });
  return out;
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// --------------------------------------------------------------------- unary

Tensor exp(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  active().vexp(a.data(), out.mut_data(), a.numel());
  seal_output(out, "exp");
  rec(out, {a},
      [out](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(g.shape());
        active().mul(g.data(), out.data(), gin[0].mut_data(), g.numel());
      });
  return out;
}

Tensor log(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.mut_data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::log(pa[i]);
  seal_output(out, "log");
  rec(out, {a},
      [a](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(g.shape());
        double* p = gin[0].mut_data();
        for (int64_t i = 0; i < g.numel(); ++i) p[i] = g.data()[i] / a.data()[i];
      });
  return out;
}

Tensor sqrt(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.mut_data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::sqrt(pa[i]);
  seal_output(out, "sqrt");
  rec(out, {a},
      [out](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(g.shape());
        double* p = gin[0].mut_data();
        for (int64_t i = 0; i < g.numel(); ++i)
          p[i] = 0.5 * g.data()[i] / out.data()[i];
      });
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.mut_data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  seal_output(out, "relu");
  rec(out, {a},
      [a](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(g.shape());
        double* p = gin[0].mut_data();
        for (int64_t i = 0; i < g.numel(); ++i)
          p[i] = a.data()[i] > 0.0 ? g.data()[i] : 0.0;
      });
  return out;
}

// shared sigmoid evaluation, vectorized through vexp
static Tensor sigmoid_values(const Tensor& a) {
  int64_t n = a.numel();
  Tensor s = Tensor::zeros(a.shape());
  active().scale(a.data(), -1.0, s.mut_data(), n);
  active().vexp(s.data(), s.mut_data(), n);
  double* p = s.mut_data();
  for (int64_t i = 0; i < n; ++i) p[i] = 1.0 / (1.0 + p[i]);
  return s;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = sigmoid_values(a);
  seal_output(out, "sigmoid");
  rec(out, {a},
      [out](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(g.shape());
        double* p = gin[0].mut_data();
        for (int64_t i = 0; i < g.numel(); ++i) {
          double s = out.data()[i];
          p[i] = g.data()[i] * s * (1.0 - s);
        }
      });
  return out;
}

Tensor silu(const Tensor& a) {
  Tensor s = sigmoid_values(a);
  Tensor out = Tensor::zeros(a.shape());
  active().mul(a.data(), s.data(), out.mut_data(), a.numel());
  seal_output(out, "silu");
  rec(out, {a},
      [a, s](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(g.shape());
        double* p = gin[0].mut_data();
        for (int64_t i = 0; i < g.numel(); ++i) {
          double sv = s.data()[i];
          double d = sv * (1.0 + a.data()[i] * (1.0 - sv));
          p[i] = g.data()[i] * d;
        }
      });
  return out;
}

Tensor softplus(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.mut_data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    double x = pa[i];
    if (x > 30.0)
      po[i] = x;
    else if (x < -30.0)
      po[i] = std::exp(x);
    else
      po[i] = std::log1p(std::exp(x));
  }
  seal_output(out, "softplus");
  rec(out, {a},
      [a](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        Tensor s = sigmoid_values(a);
        gin[0] = Tensor::zeros(g.shape());
        active().mul(g.data(), s.data(), gin[0].mut_data(), g.numel());
      });
  return out;
}

// -------------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2)
    throw ShapeError("matmul: need a rank >= 2 and b rank 2, got " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int64_t m = a.dim(int(a.rank()) - 2);
  int64_t k = a.dim(int(a.rank()) - 1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  int64_t n = b.dim(1);
  int64_t batch = a.numel() / (m * k);
  Shape os = a.shape();
  os.back() = n;
  Tensor out = Tensor::zeros(os);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.mut_data();
  for (int64_t bt = 0; bt < batch; ++bt) {
    const double* A = pa + bt * m * k;
    double* O = po + bt * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t p = 0; p < k; ++p)
        active().axpy(A[i * k + p], pb + p * n, O + i * n, n);
  }
  seal_output(out, "matmul");
  rec(out, {a, b},
      [a, b, m, k, n, batch](const Tensor& g, const std::vector<char>& need,
                             std::vector<Tensor>& gin) {
        const double* pg = g.data();
        if (need[0]) {
          gin[0] = Tensor::zeros(a.shape());
          double* ga = gin[0].mut_data();
          const double* pb = b.data();
          for (int64_t bt = 0; bt < batch; ++bt) {
            const double* G = pg + bt * m * n;
            double* GA = ga + bt * m * k;
            for (int64_t i = 0; i < m; ++i)
              for (int64_t p = 0; p < k; ++p)
                GA[i * k + p] = active().dot(G + i * n, pb + p * n, n);
          }
        }
        if (need[1]) {
          gin[1] = Tensor::zeros(b.shape());
          double* gb = gin[1].mut_data();
          const double* pa = a.data();
          for (int64_t bt = 0; bt < batch; ++bt) {
            const double* A = pa + bt * m * k;
            const double* G = pg + bt * m * n;
            for (int64_t i = 0; i < m; ++i)
              for (int64_t p = 0; p < k; ++p)
                active().axpy(A[i * k + p], G + i * n, gb + p * n, n);
          }
        }
      });
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  int64_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor out = Tensor::zeros({B, m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.mut_data();
  for (int64_t q = 0; q < B; ++q) {
    const double* A = pa + q * m * k;
    const double* Bm = pb + q * k * n;
    double* O = po + q * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t p = 0; p < k; ++p) active().axpy(A[i * k + p], Bm + p * n, O + i * n, n);
  }
  seal_output(out, "bmm");
  rec(out, {a, b},
      [a, b, B, m, k, n](const Tensor& g, const std::vector<char>& need,
                         std::vector<Tensor>& gin) {
        const double* pg = g.data();
        if (need[0]) {
          gin[0] = Tensor::zeros(a.shape());
          double* ga = gin[0].mut_data();
          for (int64_t q = 0; q < B; ++q) {
            const double* G = pg + q * m * n;
            const double* Bm = b.data() + q * k * n;
            double* GA = ga + q * m * k;
            for (int64_t i = 0; i < m; ++i)
              for (int64_t p = 0; p < k; ++p)
                GA[i * k + p] = active().dot(G + i * n, Bm + p * n, n);
          }
        }
        if (need[1]) {
          gin[1] = Tensor::zeros(b.shape());
          double* gb = gin[1].mut_data();
          for (int64_t q = 0; q < B; ++q) {
            const double* A = a.data() + q * m * k;
            const double* G = pg + q * m * n;
            double* GB = gb + q * k * n;
            for (int64_t i = 0; i < m; ++i)
              for (int64_t p = 0; p < k; ++p)
                active().axpy(A[i * k + p], G + i * n, GB + p * n, n);
          }
        }
      });
  return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  int64_t c = last_extent(x, "add_rowvec");
  if (v.rank() != 1 || v.dim(0) != c)
    throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) +
                     " does not match last extent of " + shape_str(x.shape()));
  int64_t rows = x.numel() / c;
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  const double* pv = v.data();
  double* po = out.mut_data();
  for (int64_t r = 0; r < rows; ++r)
    active().add(px + r * c, pv, po + r * c, c);
  seal_output(out, "add_rowvec");
  rec(out, {x, v},
      [rows, c](const Tensor& g, const std::vector<char>& need,
                std::vector<Tensor>& gin) {
        if (need[0]) gin[0] = g.clone();
        if (need[1]) {
          gin[1] = Tensor::zeros({c});
          double* gv = gin[1].mut_data();
          for (int64_t r = 0; r < rows; ++r)
            active().axpy(1.0, g.data() + r * c, gv, c);
        }
      });
  return out;
}

// --------------------------------------------------------------------- shape

Tensor reshape(const Tensor& x, Shape s) {
  Tensor out = Tensor::view_reshape(x, std::move(s));
  seal_output(out, "reshape");
  Shape old = x.shape();
  rec(out, {x},
      [old](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(old);
        std::memcpy(gin[0].mut_data(), g.data(), size_t(g.numel()) * sizeof(double));
      });
  return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  int r = int(x.rank());
  if (int(perm.size()) != r)
    throw ShapeError("permute: perm rank " + std::to_string(perm.size()) +
                     " vs tensor rank " + std::to_string(r));
  std::vector<char> seen(size_t(r), 0);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[size_t(p)])
      throw ShapeError("permute: invalid permutation");
    seen[size_t(p)] = 1;
  }
  Shape os(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) os[size_t(i)] = x.dim(perm[size_t(i)]);
  Tensor out = Tensor::zeros(os);

  std::vector<int64_t> in_stride(size_t(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_stride[size_t(i)] = in_stride[size_t(i) + 1] * x.dim(i + 1);
  std::vector<int64_t> idx(size_t(r), 0);
  const double* px = x.data();
  double* po = out.mut_data();
  int64_t n = x.numel();
  for (int64_t f = 0; f < n; ++f) {
    int64_t src = 0;
    for (int i = 0; i < r; ++i) src += idx[size_t(i)] * in_stride[size_t(perm[size_t(i)])];
    po[f] = px[src];
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[size_t(i)] < os[size_t(i)]) break;
      idx[size_t(i)] = 0;
    }
  }
  seal_output(out, "permute");
  std::vector<int> inv(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) inv[size_t(perm[size_t(i)])] = i;
  rec(out, {x},
      [inv](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        NoGradScope ng;
        gin[0] = permute(g, inv);
      });
  return out;
}

Tensor flip(const Tensor& x, int axis) {
  AxisSplit ax = split_axis(x.shape(), axis, "flip");
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.mut_data();
  for (int64_t o = 0; o < ax.outer; ++o)
    for (int64_t e = 0; e < ax.extent; ++e)
      std::memcpy(po + (o * ax.extent + ax.extent - 1 - e) * ax.inner,
                  px + (o * ax.extent + e) * ax.inner,
                  size_t(ax.inner) * sizeof(double));
  seal_output(out, "flip");
  rec(out, {x},
      [axis](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        NoGradScope ng;
        gin[0] = flip(g, axis);
      });
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  if (a.rank() != b.rank()) throw ShapeError("concat: rank mismatch");
  for (int i = 0; i < int(a.rank()); ++i)
    if (i != axis && a.dim(i) != b.dim(i))
      throw ShapeError("concat: shapes " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()) + " differ off axis " +
                       std::to_string(axis));
  AxisSplit aa = split_axis(a.shape(), axis, "concat");
  AxisSplit ab = split_axis(b.shape(), axis, "concat");
  Shape os = a.shape();
  os[size_t(axis)] = aa.extent + ab.extent;
  Tensor out = Tensor::zeros(os);
  double* po = out.mut_data();
  int64_t eo = aa.extent + ab.extent;
  for (int64_t o = 0; o < aa.outer; ++o) {
    std::memcpy(po + o * eo * aa.inner, a.data() + o * aa.extent * aa.inner,
                size_t(aa.extent * aa.inner) * sizeof(double));
    std::memcpy(po + (o * eo + aa.extent) * aa.inner,
                b.data() + o * ab.extent * ab.inner,
                size_t(ab.extent * ab.inner) * sizeof(double));
  }
  seal_output(out, "concat");
  int64_t ea = aa.extent;
  int64_t eb = ab.extent;
  rec(out, {a, b},
      [axis, ea, eb](const Tensor& g, const std::vector<char>& need,
                     std::vector<Tensor>& gin) {
        NoGradScope ng;
        if (need[0]) gin[0] = slice(g, axis, 0, ea);
        if (need[1]) gin[1] = slice(g, axis, ea, eb);
      });
  return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
  AxisSplit ax = split_axis(x.shape(), axis, "slice");
  if (start < 0 || len <= 0 || start + len > ax.extent)
    throw ShapeError("slice: window [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") outside extent " +
                     std::to_string(ax.extent));
  Shape os = x.shape();
  os[size_t(axis)] = len;
  Tensor out = Tensor::zeros(os);
  double* po = out.mut_data();
  const double* px = x.data();
  for (int64_t o = 0; o < ax.outer; ++o)
    std::memcpy(po + o * len * ax.inner, px + (o * ax.extent + start) * ax.inner,
                size_t(len * ax.inner) * sizeof(double));
  seal_output(out, "slice");
  Shape xs = x.shape();
  rec(out, {x},
      [xs, ax, start, len](const Tensor& g, const std::vector<char>&,
                           std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(xs);
        double* p = gin[0].mut_data();
        for (int64_t o = 0; o < ax.outer; ++o)
          std::memcpy(p + (o * ax.extent + start) * ax.inner,
                      g.data() + o * len * ax.inner,
                      size_t(len * ax.inner) * sizeof(double));
      });
  return out;
}

Tensor expand(const Tensor& x, int axis, int64_t factor) {
  AxisSplit ax = split_axis(x.shape(), axis, "expand");
  if (ax.extent != 1)
    throw ShapeError("expand: axis " + std::to_string(axis) + " has extent " +
                     std::to_string(ax.extent) + ", must be 1");
  if (factor <= 0) throw ShapeError("expand: non-positive factor");
  Shape os = x.shape();
  os[size_t(axis)] = factor;
  Tensor out = Tensor::zeros(os);
  double* po = out.mut_data();
  const double* px = x.data();
  for (int64_t o = 0; o < ax.outer; ++o)
    for (int64_t f = 0; f < factor; ++f)
      std::memcpy(po + (o * factor + f) * ax.inner, px + o * ax.inner,
                  size_t(ax.inner) * sizeof(double));
  seal_output(out, "expand");
  Shape xs = x.shape();
  rec(out, {x},
      [xs, ax, factor](const Tensor& g, const std::vector<char>&,
                       std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(xs);
        double* p = gin[0].mut_data();
        for (int64_t o = 0; o < ax.outer; ++o)
          for (int64_t f = 0; f < factor; ++f)
            active().axpy(1.0, g.data() + (o * factor + f) * ax.inner,
                          p + o * ax.inner, ax.inner);
      });
  return out;
}

// ---------------------------------------------------------------- reductions

Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::scalar(active().sum(x.data(), x.numel()));
  seal_output(out, "sum_all");
  Shape xs = x.shape();
  rec(out, {x},
      [xs](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        gin[0] = Tensor::full(xs, g.item());
      });
  return out;
}

Tensor mean_all(const Tensor& x) {
  double inv = 1.0 / double(x.numel());
  Tensor out = Tensor::scalar(active().sum(x.data(), x.numel()) * inv);
  seal_output(out, "mean_all");
  Shape xs = x.shape();
  rec(out, {x},
      [xs, inv](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        gin[0] = Tensor::full(xs, g.item() * inv);
      });
  return out;
}

static Tensor reduce_axis_impl(const Tensor& x, int axis, bool mean) {
  AxisSplit ax = split_axis(x.shape(), axis, mean ? "mean_axis" : "sum_axis");
  Shape os = x.shape();
  os.erase(os.begin() + axis);
  if (os.empty()) os = {1};
  Tensor out = Tensor::zeros(os);
  double* po = out.mut_data();
  const double* px = x.data();
  for (int64_t o = 0; o < ax.outer; ++o)
    for (int64_t e = 0; e < ax.extent; ++e)
      active().axpy(1.0, px + (o * ax.extent + e) * ax.inner, po + o * ax.inner,
                    ax.inner);
  if (mean) active().scale(po, 1.0 / double(ax.extent), po, out.numel());
  seal_output(out, mean ? "mean_axis" : "sum_axis");
  Shape xs = x.shape();
  double w = mean ? 1.0 / double(ax.extent) : 1.0;
  rec(out, {x},
      [xs, ax, w](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(xs);
        double* p = gin[0].mut_data();
        for (int64_t o = 0; o < ax.outer; ++o)
          for (int64_t e = 0; e < ax.extent; ++e)
            active().axpy(w, g.data() + o * ax.inner,
                          p + (o * ax.extent + e) * ax.inner, ax.inner);
      });
  return out;
}

Tensor sum_axis(const Tensor& x, int axis) { return reduce_axis_impl(x, axis, false); }
Tensor mean_axis(const Tensor& x, int axis) { return reduce_axis_impl(x, axis, true); }

// ------------------------------------------------------------ fused row ops

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  int64_t c = last_extent(x, "layernorm");
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
    throw ShapeError("layernorm: gamma/beta must be [" + std::to_string(c) + "]");
  int64_t rows = x.numel() / c;
  Tensor out = Tensor::zeros(x.shape());
  Tensor xhat = Tensor::zeros(x.shape());
  Tensor inv = Tensor::zeros({rows});
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  double* po = out.mut_data();
  double* ph = xhat.mut_data();
  double* pi = inv.mut_data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * c;
    double mean = active().sum(xr, c) / double(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      double d = xr[j] - mean;
      var += d * d;
    }
    var /= double(c);
    double iv = 1.0 / std::sqrt(var + eps);
    pi[r] = iv;
    for (int64_t j = 0; j < c; ++j) {
      double h = (xr[j] - mean) * iv;
      ph[r * c + j] = h;
      po[r * c + j] = pg[j] * h + pb[j];
    }
  }
  seal_output(out, "layernorm");
  rec(out, {x, gamma, beta},
      [gamma, xhat, inv, rows, c](const Tensor& g, const std::vector<char>& need,
                                  std::vector<Tensor>& gin) {
        const double* pg = g.data();
        const double* pga = gamma.data();
        const double* ph = xhat.data();
        const double* pi = inv.data();
        if (need[0]) {
          gin[0] = Tensor::zeros(xhat.shape());
          double* gx = gin[0].mut_data();
          std::vector<double> t1(static_cast<size_t>(c));
          for (int64_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (int64_t j = 0; j < c; ++j) {
              t1[size_t(j)] = pg[r * c + j] * pga[j];
              s1 += t1[size_t(j)];
              s2 += t1[size_t(j)] * ph[r * c + j];
            }
            s1 /= double(c);
            s2 /= double(c);
            for (int64_t j = 0; j < c; ++j)
              gx[r * c + j] = pi[r] * (t1[size_t(j)] - s1 - ph[r * c + j] * s2);
          }
        }
        if (need[1]) {
          gin[1] = Tensor::zeros({c});
          double* gg = gin[1].mut_data();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < c; ++j) gg[j] += pg[r * c + j] * ph[r * c + j];
        }
        if (need[2]) {
          gin[2] = Tensor::zeros({c});
          double* gb = gin[2].mut_data();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < c; ++j) gb[j] += pg[r * c + j];
        }
      });
  return out;
}

Tensor softmax_last(const Tensor& x) {
  int64_t c = last_extent(x, "softmax_last");
  int64_t rows = x.numel() / c;
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.mut_data();
  std::vector<double> buf(static_cast<size_t>(c));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * c;
    double m = active().max(xr, c);
    for (int64_t j = 0; j < c; ++j) buf[size_t(j)] = xr[j] - m;
    active().vexp(buf.data(), po + r * c, c);
    double s = active().sum(po + r * c, c);
    active().scale(po + r * c, 1.0 / s, po + r * c, c);
  }
  seal_output(out, "softmax_last");
  rec(out, {x},
      [out, rows, c](const Tensor& g, const std::vector<char>&,
                     std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(out.shape());
        double* gx = gin[0].mut_data();
        const double* po = out.data();
        const double* pg = g.data();
        for (int64_t r = 0; r < rows; ++r) {
          double dot = active().dot(pg + r * c, po + r * c, c);
          for (int64_t j = 0; j < c; ++j)
            gx[r * c + j] = po[r * c + j] * (pg[r * c + j] - dot);
        }
      });
  return out;
}

Tensor log_softmax_last(const Tensor& x) {
  int64_t c = last_extent(x, "log_softmax_last");
  int64_t rows = x.numel() / c;
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.mut_data();
  std::vector<double> buf(static_cast<size_t>(c));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * c;
    double m = active().max(xr, c);
    for (int64_t j = 0; j < c; ++j) buf[size_t(j)] = xr[j] - m;
    std::vector<double> e(static_cast<size_t>(c));
    active().vexp(buf.data(), e.data(), c);
    double lse = std::log(active().sum(e.data(), c));
    for (int64_t j = 0; j < c; ++j) po[r * c + j] = buf[size_t(j)] - lse;
  }
  seal_output(out, "log_softmax_last");
  rec(out, {x},
      [out, rows, c](const Tensor& g, const std::vector<char>&,
                     std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(out.shape());
        double* gx = gin[0].mut_data();
        const double* po = out.data();
        const double* pg = g.data();
        std::vector<double> sm(static_cast<size_t>(c));
        for (int64_t r = 0; r < rows; ++r) {
          double sg = active().sum(pg + r * c, c);
          active().vexp(po + r * c, sm.data(), c);
          for (int64_t j = 0; j < c; ++j)
            gx[r * c + j] = pg[r * c + j] - sm[size_t(j)] * sg;
        }
      });
  return out;
}

// ------------------------------------------------------------------ indexing

Tensor select_last(const Tensor& x, const std::vector<int64_t>& idx) {
  if (x.rank() != 2) throw ShapeError("select_last: expects [R,C]");
  int64_t rows = x.dim(0);
  int64_t c = x.dim(1);
  if (int64_t(idx.size()) != rows)
    throw ShapeError("select_last: index count " + std::to_string(idx.size()) +
                     " vs rows " + std::to_string(rows));
  for (int64_t v : idx)
    if (v < 0 || v >= c) throw ShapeError("select_last: index out of range");
  Tensor out = Tensor::zeros({rows});
  double* po = out.mut_data();
  const double* px = x.data();
  for (int64_t r = 0; r < rows; ++r) po[r] = px[r * c + idx[size_t(r)]];
  seal_output(out, "select_last");
  rec(out, {x},
      [idx, rows, c](const Tensor& g, const std::vector<char>&,
                     std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros({rows, c});
        double* p = gin[0].mut_data();
        for (int64_t r = 0; r < rows; ++r)
          p[r * c + idx[size_t(r)]] = g.data()[r];
      });
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows_idx) {
  if (x.rank() != 2) throw ShapeError("gather_rows: expects [R,C]");
  int64_t rows = x.dim(0);
  int64_t c = x.dim(1);
  if (rows_idx.empty()) throw ShapeError("gather_rows: empty row list");
  for (int64_t v : rows_idx)
    if (v < 0 || v >= rows) throw ShapeError("gather_rows: row index out of range");
  int64_t p_count = int64_t(rows_idx.size());
  Tensor out = Tensor::zeros({p_count, c});
  double* po = out.mut_data();
  const double* px = x.data();
  for (int64_t r = 0; r < p_count; ++r)
    std::memcpy(po + r * c, px + rows_idx[size_t(r)] * c, size_t(c) * sizeof(double));
  seal_output(out, "gather_rows");
  rec(out, {x},
      [rows_idx, rows, c](const Tensor& g, const std::vector<char>&,
                          std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros({rows, c});
        double* p = gin[0].mut_data();
        for (size_t r = 0; r < rows_idx.size(); ++r)
          active().axpy(1.0, g.data() + int64_t(r) * c, p + rows_idx[r] * c, c);
      });
  return out;
}

// --------------------------------------------------------------------- convs

Tensor dwconv1d(const Tensor& x, const Tensor& k) {
  if (x.rank() != 3 || k.rank() != 2)
    throw ShapeError("dwconv1d: want x [B,T,C] and k [C,K], got " +
                     shape_str(x.shape()) + " and " + shape_str(k.shape()));
  int64_t B = x.dim(0), T = x.dim(1), C = x.dim(2), K = k.dim(1);
  if (k.dim(0) != C)
    throw ShapeError("dwconv1d: kernel channels " + std::to_string(k.dim(0)) +
                     " vs input channels " + std::to_string(C));
  if (K % 2 == 0) throw ConfigError("dwconv1d: kernel size must be odd");
  int64_t off = K / 2;
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  const double* pk = k.data();
  double* po = out.mut_data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t j = 0; j < K; ++j) {
        int64_t tt = t + j - off;
        if (tt < 0 || tt >= T) continue;
        double* orow = po + (b * T + t) * C;
        const double* xrow = px + (b * T + tt) * C;
        for (int64_t ch = 0; ch < C; ++ch) orow[ch] += pk[ch * K + j] * xrow[ch];
      }
  seal_output(out, "dwconv1d");
  rec(out, {x, k},
      [x, k, B, T, C, K, off](const Tensor& g, const std::vector<char>& need,
                              std::vector<Tensor>& gin) {
        const double* pg = g.data();
        const double* px = x.data();
        const double* pk = k.data();
        if (need[0]) gin[0] = Tensor::zeros(x.shape());
        if (need[1]) gin[1] = Tensor::zeros(k.shape());
        double* gx = need[0] ? gin[0].mut_data() : nullptr;
        double* gk = need[1] ? gin[1].mut_data() : nullptr;
        for (int64_t b = 0; b < B; ++b)
          for (int64_t t = 0; t < T; ++t)
            for (int64_t j = 0; j < K; ++j) {
              int64_t tt = t + j - off;
              if (tt < 0 || tt >= T) continue;
              const double* grow = pg + (b * T + t) * C;
              const double* xrow = px + (b * T + tt) * C;
              for (int64_t ch = 0; ch < C; ++ch) {
                if (gx) gx[(b * T + tt) * C + ch] += pk[ch * K + j] * grow[ch];
                if (gk) gk[ch * K + j] += xrow[ch] * grow[ch];
              }
            }
      });
  return out;
}

Tensor dwconv2d(const Tensor& x, const Tensor& k) {
  if (x.rank() != 4 || k.rank() != 3)
    throw ShapeError("dwconv2d: want x [B,H,W,C] and k [C,Kh,Kw], got " +
                     shape_str(x.shape()) + " and " + shape_str(k.shape()));
  int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  int64_t Kh = k.dim(1), Kw = k.dim(2);
  if (k.dim(0) != C)
    throw ShapeError("dwconv2d: kernel channels " + std::to_string(k.dim(0)) +
                     " vs input channels " + std::to_string(C));
  if (Kh % 2 == 0 || Kw % 2 == 0)
    throw ConfigError("dwconv2d: kernel extents must be odd");
  int64_t oh = Kh / 2, ow = Kw / 2;
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  const double* pk = k.data();
  double* po = out.mut_data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j) {
        double* orow = po + ((b * H + i) * W + j) * C;
        for (int64_t u = 0; u < Kh; ++u) {
          int64_t ii = i + u - oh;
          if (ii < 0 || ii >= H) continue;
          for (int64_t v = 0; v < Kw; ++v) {
            int64_t jj = j + v - ow;
            if (jj < 0 || jj >= W) continue;
            const double* xrow = px + ((b * H + ii) * W + jj) * C;
            const double* krow = pk;
            for (int64_t ch = 0; ch < C; ++ch)
              orow[ch] += krow[(ch * Kh + u) * Kw + v] * xrow[ch];
          }
        }
      }
  seal_output(out, "dwconv2d");
  rec(out, {x, k},
      [x, k, B, H, W, C, Kh, Kw, oh, ow](const Tensor& g, const std::vector<char>& need,
                                         std::vector<Tensor>& gin) {
        const double* pg = g.data();
        const double* px = x.data();
        const double* pk = k.data();
        if (need[0]) gin[0] = Tensor::zeros(x.shape());
        if (need[1]) gin[1] = Tensor::zeros(k.shape());
        double* gx = need[0] ? gin[0].mut_data() : nullptr;
        double* gk = need[1] ? gin[1].mut_data() : nullptr;
        for (int64_t b = 0; b < B; ++b)
          for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
              const double* grow = pg + ((b * H + i) * W + j) * C;
              for (int64_t u = 0; u < Kh; ++u) {
                int64_t ii = i + u - oh;
                if (ii < 0 || ii >= H) continue;
                for (int64_t v = 0; v < Kw; ++v) {
                  int64_t jj = j + v - ow;
                  if (jj < 0 || jj >= W) continue;
                  int64_t src = ((b * H + ii) * W + jj) * C;
                  for (int64_t ch = 0; ch < C; ++ch) {
                    if (gx) gx[src + ch] += pk[(ch * Kh + u) * Kw + v] * grow[ch];
                    if (gk) gk[(ch * Kh + u) * Kw + v] += px[src + ch] * grow[ch];
                  }
                }
              }
            }
      });
  return out;
}

// ------------------------------------------------------------- pool/upsample

Tensor avgpool_spatial(const Tensor& x, int64_t fh, int64_t fw, bool pad) {
  if (x.rank() != 4) throw ShapeError("avgpool_spatial: expects [T,H,W,C]");
  if (fh <= 0 || fw <= 0) throw ConfigError("avgpool_spatial: non-positive factor");
  int64_t T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (!pad && (H % fh != 0 || W % fw != 0))
    throw ConfigError("avgpool_spatial: extents " + std::to_string(H) + "x" +
                      std::to_string(W) + " not divisible by " + std::to_string(fh) +
                      "x" + std::to_string(fw) + " (enable padding to allow this)");
  int64_t Ho = (H + fh - 1) / fh;
  int64_t Wo = (W + fw - 1) / fw;
  double inv = 1.0 / double(fh * fw);
  Tensor out = Tensor::zeros({T, Ho, Wo, C});
  const double* px = x.data();
  double* po = out.mut_data();
  for (int64_t t = 0; t < T; ++t)
    for (int64_t i = 0; i < Ho; ++i)
      for (int64_t j = 0; j < Wo; ++j) {
        double* orow = po + ((t * Ho + i) * Wo + j) * C;
        for (int64_t u = 0; u < fh; ++u) {
          int64_t ii = i * fh + u;
          if (ii >= H) continue;
          for (int64_t v = 0; v < fw; ++v) {
            int64_t jj = j * fw + v;
            if (jj >= W) continue;
            active().axpy(inv, px + ((t * H + ii) * W + jj) * C, orow, C);
          }
        }
      }
  seal_output(out, "avgpool_spatial");
  Shape xs = x.shape();
  rec(out, {x},
      [xs, T, H, W, C, Ho, Wo, fh, fw, inv](const Tensor& g, const std::vector<char>&,
                                            std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(xs);
        double* p = gin[0].mut_data();
        const double* pg = g.data();
        for (int64_t t = 0; t < T; ++t)
          for (int64_t i = 0; i < Ho; ++i)
            for (int64_t j = 0; j < Wo; ++j) {
              const double* grow = pg + ((t * Ho + i) * Wo + j) * C;
              for (int64_t u = 0; u < fh; ++u) {
                int64_t ii = i * fh + u;
                if (ii >= H) continue;
                for (int64_t v = 0; v < fw; ++v) {
                  int64_t jj = j * fw + v;
                  if (jj >= W) continue;
                  active().axpy(inv, grow, p + ((t * H + ii) * W + jj) * C, C);
                }
              }
            }
      });
  return out;
}

Tensor upsample_nearest(const Tensor& x, int64_t fh, int64_t fw) {
  if (x.rank() != 4) throw ShapeError("upsample_nearest: expects [T,h,w,C]");
  if (fh <= 0 || fw <= 0) throw ConfigError("upsample_nearest: non-positive factor");
  int64_t T = x.dim(0), h = x.dim(1), w = x.dim(2), C = x.dim(3);
  Tensor out = Tensor::zeros({T, h * fh, w * fw, C});
  const double* px = x.data();
  double* po = out.mut_data();
  int64_t H = h * fh, W = w * fw;
  for (int64_t t = 0; t < T; ++t)
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j)
        std::memcpy(po + ((t * H + i) * W + j) * C,
                    px + ((t * h + i / fh) * w + j / fw) * C,
                    size_t(C) * sizeof(double));
  seal_output(out, "upsample_nearest");
  Shape xs = x.shape();
  rec(out, {x},
      [xs, T, h, w, C, fh, fw](const Tensor& g, const std::vector<char>&,
                               std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(xs);
        double* p = gin[0].mut_data();
        const double* pg = g.data();
        int64_t H = h * fh, W = w * fw;
        for (int64_t t = 0; t < T; ++t)
          for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j)
              active().axpy(1.0, pg + ((t * H + i) * W + j) * C,
                            p + ((t * h + i / fh) * w + j / fw) * C, C);
      });
  return out;
}

Tensor maxpool_time(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("maxpool_time: expects [T,C]");
  int64_t T = x.dim(0), C = x.dim(1);
  if (T % 2 != 0)
    throw ShapeError("maxpool_time: odd time extent " + std::to_string(T));
  Tensor out = Tensor::zeros({T / 2, C});
  const double* px = x.data();
  double* po = out.mut_data();
  for (int64_t t = 0; t < T / 2; ++t)
    for (int64_t ch = 0; ch < C; ++ch) {
      double a = px[(2 * t) * C + ch];
      double b = px[(2 * t + 1) * C + ch];
      po[t * C + ch] = a >= b ? a : b;
    }
  seal_output(out, "maxpool_time");
  rec(out, {x},
      [x, T, C](const Tensor& g, const std::vector<char>&, std::vector<Tensor>& gin) {
        gin[0] = Tensor::zeros(x.shape());
        double* p = gin[0].mut_data();
        const double* px = x.data();
        const double* pg = g.data();
        for (int64_t t = 0; t < T / 2; ++t)
          for (int64_t ch = 0; ch < C; ++ch) {
            double a = px[(2 * t) * C + ch];
            double b = px[(2 * t + 1) * C + ch];
            int64_t win = a >= b ? 2 * t : 2 * t + 1;
            p[win * C + ch] += pg[t * C + ch];
          }
      });
  return out;
}

}  // namespace tad::op
