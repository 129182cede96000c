#include "tad/ssm.hpp"

#include <cmath>
#include <cstring>

#include "tad/kernels.hpp"
#include "tad/ops.hpp"
#include "tad/tape.hpp"

namespace tad {

namespace {

void check_scan_args(const Tensor& x, const Tensor& delta, const Tensor& a,
                     const Tensor& bseq, const Tensor& cseq) {
  if (x.rank() != 3) throw ShapeError("selective_scan: x must be [B,T,d_r], got " +
                                      shape_str(x.shape()));
  if (delta.shape() != x.shape())
    throw ShapeError("selective_scan: delta " + shape_str(delta.shape()) +
                     " must match x " + shape_str(x.shape()));
  if (a.rank() != 2 || a.dim(0) != x.dim(2))
    throw ShapeError("selective_scan: a must be [d_r,d_s] with d_r=" +
                     std::to_string(x.dim(2)) + ", got " + shape_str(a.shape()));
  Shape want = {x.dim(0), x.dim(1), a.dim(1)};
  if (bseq.shape() != want || cseq.shape() != want)
    throw ShapeError("selective_scan: bseq/cseq must be " + shape_str(want));
}

}  // namespace

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a,
                      const Tensor& bseq, const Tensor& cseq) {
  check_scan_args(x, delta, a, bseq, cseq);
  int64_t B = x.dim(0), T = x.dim(1), dr = x.dim(2), ds = a.dim(1);

  Tape* tp = current_tape();
  bool taped = tp && (tp->tracked(x) || tp->tracked(delta) || tp->tracked(a) ||
                      tp->tracked(bseq) || tp->tracked(cseq));

  Tensor y = Tensor::zeros({B, T, dr});
  Tensor hh;  // full state history, only needed for the backward pass
  if (taped) hh = Tensor::zeros({B, T, dr, ds});

  std::vector<double> scratch(static_cast<size_t>(dr * ds));
  const auto& K = kernels::active();
  for (int64_t b = 0; b < B; ++b) {
    std::memset(scratch.data(), 0, scratch.size() * sizeof(double));
    K.scan(T, dr, ds, x.data() + b * T * dr, delta.data() + b * T * dr, a.data(),
           bseq.data() + b * T * ds, cseq.data() + b * T * ds,
           y.mut_data() + b * T * dr,
           taped ? hh.mut_data() + b * T * dr * ds : nullptr, scratch.data());
  }
  seal_output(y, "selective_scan");

  if (taped) {
    tp->record(
        y, {x, delta, a, bseq, cseq},
        [x, delta, a, bseq, cseq, hh, B, T, dr, ds](const Tensor& g,
                                                    const std::vector<char>& need,
                                                    std::vector<Tensor>& gin) {
          Tensor gx = Tensor::zeros(x.shape());
          Tensor gdelta = Tensor::zeros(x.shape());
          Tensor ga = Tensor::zeros(a.shape());
          Tensor gb = Tensor::zeros(bseq.shape());
          Tensor gc = Tensor::zeros(bseq.shape());
          double* pgx = gx.mut_data();
          double* pgd = gdelta.mut_data();
          double* pga = ga.mut_data();
          double* pgb = gb.mut_data();
          double* pgc = gc.mut_data();
          const double* px = x.data();
          const double* pd = delta.data();
          const double* pa = a.data();
          const double* pb = bseq.data();
          const double* pc = cseq.data();
          const double* pg = g.data();
          const double* ph = hh.data();
          std::vector<double> ghn(static_cast<size_t>(dr * ds));
          for (int64_t b = 0; b < B; ++b) {
            std::memset(ghn.data(), 0, ghn.size() * sizeof(double));
            const double* hhb = ph + b * T * dr * ds;
            for (int64_t t = T - 1; t >= 0; --t) {
              for (int64_t d = 0; d < dr; ++d) {
                double gyv = pg[(b * T + t) * dr + d];
                double dt = pd[(b * T + t) * dr + d];
                double xv = px[(b * T + t) * dr + d];
                double gx_acc = 0.0, gd_acc = 0.0;
                const double* ad = pa + d * ds;
                double* ghn_d = ghn.data() + d * ds;
                for (int64_t s = 0; s < ds; ++s) {
                  double h_ts = hhb[(t * dr + d) * ds + s];
                  double bt = pb[(b * T + t) * ds + s];
                  double ct = pc[(b * T + t) * ds + s];
                  double gh = gyv * ct + ghn_d[s];
                  pgc[(b * T + t) * ds + s] += gyv * h_ts;
                  double hp = t > 0 ? hhb[((t - 1) * dr + d) * ds + s] : 0.0;
                  double ab = std::exp(dt * ad[s]);
                  double gab = gh * hp;
                  pga[d * ds + s] += gab * ab * dt;
                  gd_acc += gab * ab * ad[s] + gh * bt * xv;
                  pgb[(b * T + t) * ds + s] += gh * dt * xv;
                  gx_acc += gh * dt * bt;
                  ghn_d[s] = gh * ab;
                }
                pgx[(b * T + t) * dr + d] = gx_acc;
                pgd[(b * T + t) * dr + d] = gd_acc;
              }
            }
          }
          if (need[0]) gin[0] = std::move(gx);
          if (need[1]) gin[1] = std::move(gdelta);
          if (need[2]) gin[2] = std::move(ga);
          if (need[3]) gin[3] = std::move(gb);
          if (need[4]) gin[4] = std::move(gc);
        });
  }
  return y;
}

Tensor selective_scan_chunked(const Tensor& x, const Tensor& delta, const Tensor& a,
                              const Tensor& bseq, const Tensor& cseq, int64_t chunk) {
  check_scan_args(x, delta, a, bseq, cseq);
  if (chunk < 1) throw ConfigError("selective_scan_chunked: chunk must be >= 1");
  NoGradScope ng;
  int64_t B = x.dim(0), T = x.dim(1), dr = x.dim(2), ds = a.dim(1);
  int64_t nstate = dr * ds;
  int64_t nchunks = (T + chunk - 1) / chunk;

  Tensor y = Tensor::zeros({B, T, dr});
  const double* px = x.data();
  const double* pd = delta.data();
  const double* pa = a.data();
  const double* pb = bseq.data();
  const double* pc = cseq.data();
  double* py = y.mut_data();

  std::vector<double> P(static_cast<size_t>(nchunks * nstate));
  std::vector<double> q(static_cast<size_t>(nchunks * nstate));
  std::vector<double> h0(static_cast<size_t>(nstate));
  std::vector<double> h(static_cast<size_t>(nstate));

  for (int64_t b = 0; b < B; ++b) {
    // each chunk independently as an affine map h -> P h + q
    for (int64_t c = 0; c < nchunks; ++c) {
      double* Pc = P.data() + c * nstate;
      double* qc = q.data() + c * nstate;
      for (int64_t i = 0; i < nstate; ++i) {
        Pc[i] = 1.0;
        qc[i] = 0.0;
      }
      int64_t t0 = c * chunk, t1 = std::min(T, t0 + chunk);
      for (int64_t t = t0; t < t1; ++t)
        for (int64_t d = 0; d < dr; ++d) {
          double dt = pd[(b * T + t) * dr + d];
          double bx = dt * px[(b * T + t) * dr + d];
          for (int64_t s = 0; s < ds; ++s) {
            double ab = std::exp(dt * pa[d * ds + s]);
            int64_t i = d * ds + s;
            Pc[i] *= ab;
            qc[i] = ab * qc[i] + bx * pb[(b * T + t) * ds + s];
          }
        }
    }
    // fold the chunk maps to get the entry state of each chunk
    std::memset(h0.data(), 0, h0.size() * sizeof(double));
    for (int64_t c = 0; c < nchunks; ++c) {
      int64_t t0 = c * chunk, t1 = std::min(T, t0 + chunk);
      std::memcpy(h.data(), h0.data(), h0.size() * sizeof(double));
      for (int64_t t = t0; t < t1; ++t)
        for (int64_t d = 0; d < dr; ++d) {
          double dt = pd[(b * T + t) * dr + d];
          double bx = dt * px[(b * T + t) * dr + d];
          double acc = 0.0;
          for (int64_t s = 0; s < ds; ++s) {
            int64_t i = d * ds + s;
            double ab = std::exp(dt * pa[i]);
            h[static_cast<size_t>(i)] =
                ab * h[static_cast<size_t>(i)] + bx * pb[(b * T + t) * ds + s];
            acc += pc[(b * T + t) * ds + s] * h[static_cast<size_t>(i)];
          }
          py[(b * T + t) * dr + d] = acc;
        }
      // advance the boundary state through the precomputed chunk map
      for (int64_t i = 0; i < nstate; ++i)
        h0[static_cast<size_t>(i)] = P[static_cast<size_t>(c * nstate + i)] *
                                         h0[static_cast<size_t>(i)] +
                                     q[static_cast<size_t>(c * nstate + i)];
    }
  }
  seal_output(y, "selective_scan_chunked");
  return y;
}

TbSsmParams TbSsmParams::init(int64_t d_r, int64_t d_s, std::mt19937_64& rng) {
  if (d_r < 1 || d_s < 1)
    throw ConfigError("TbSsmParams: d_r and d_s must be positive");
  TbSsmParams p;
  p.d_r = d_r;
  p.d_s = d_s;
  p.ln_gamma = Tensor::full({d_r}, 1.0);
  p.ln_beta = Tensor::zeros({d_r});
  p.w_in = randn(rng, {d_r, 2 * d_r}, 1.0 / std::sqrt(double(d_r)));
  // transitions start at -(1..d_s) per state; the backward direction gets a
  // small alternating offset so the two directions are not mirror images
  p.a_log_fwd = Tensor::zeros({d_r, d_s});
  p.a_log_bwd = Tensor::zeros({d_r, d_s});
  for (int64_t d = 0; d < d_r; ++d)
    for (int64_t s = 0; s < d_s; ++s) {
      double base = std::log(double(s + 1));
      p.a_log_fwd.mut_data()[d * d_s + s] = base;
      p.a_log_bwd.mut_data()[d * d_s + s] = base + (s % 2 == 0 ? 0.01 : -0.01);
    }
  p.w_bc = randn(rng, {d_r, 2 * d_s}, 1.0 / std::sqrt(double(d_r)));
  p.w_delta = randn(rng, {d_r, 1}, 1.0 / std::sqrt(double(d_r)));
  // softplus(b_delta) ~ 0.1 step size at init
  p.b_delta = Tensor::full({1}, -2.25);
  p.w_out = randn(rng, {2 * d_r, d_r}, 1.0 / std::sqrt(double(2 * d_r)));
  return p;
}

std::vector<std::pair<std::string, Tensor*>> TbSsmParams::named() {
  return {{"ln_gamma", &ln_gamma}, {"ln_beta", &ln_beta},
          {"w_in", &w_in},         {"a_log_fwd", &a_log_fwd},
          {"a_log_bwd", &a_log_bwd}, {"w_bc", &w_bc},
          {"w_delta", &w_delta},   {"b_delta", &b_delta},
          {"w_out", &w_out}};
}

Tensor tb_ssm(const Tensor& x, const TbSsmParams& p, const SsmOptions& opt) {
  if (x.rank() != 3 || x.dim(2) != p.d_r)
    throw ShapeError("tb_ssm: x must be [B,T," + std::to_string(p.d_r) + "], got " +
                     shape_str(x.shape()));
  int64_t B = x.dim(0), T = x.dim(1), dr = p.d_r, ds = p.d_s;

  Tensor ln = op::layernorm(x, p.ln_gamma, p.ln_beta);
  Tensor u = op::matmul(ln, p.w_in);  // [B,T,2dr]
  Tensor uf = op::slice(u, 2, 0, dr);
  Tensor ub = op::slice(u, 2, dr, dr);
  Tensor bc = op::matmul(ln, p.w_bc);  // [B,T,2ds]
  Tensor bs = op::slice(bc, 2, 0, ds);
  Tensor cs = op::slice(bc, 2, ds, ds);

  Tensor dvec;
  if (opt.delta == DeltaMode::selective) {
    Tensor draw = op::add_rowvec(op::matmul(ln, p.w_delta), p.b_delta);  // [B,T,1]
    dvec = op::expand(op::softplus(draw), 2, dr);                        // [B,T,dr]
  } else {
    dvec = Tensor::full({B, T, dr}, 1.0);
  }

  Tensor a_f = op::neg(op::exp(p.a_log_fwd));
  Tensor a_b = op::neg(op::exp(opt.tied_a ? p.a_log_fwd : p.a_log_bwd));

  Tensor yf = selective_scan(uf, dvec, a_f, bs, cs);
  Tensor yb = op::flip(selective_scan(op::flip(ub, 1), op::flip(dvec, 1), a_b,
                                      op::flip(bs, 1), op::flip(cs, 1)),
                       1);
  return op::matmul(op::concat(yf, yb, 2), p.w_out);
}

TbSsmParams swap_directions(const TbSsmParams& p) {
  NoGradScope ng;
  TbSsmParams s = p;
  s.a_log_fwd = p.a_log_bwd.clone();
  s.a_log_bwd = p.a_log_fwd.clone();
  // swap the forward/backward column block of w_in and row block of w_out
  s.w_in = op::concat(op::slice(p.w_in, 1, p.d_r, p.d_r),
                      op::slice(p.w_in, 1, 0, p.d_r), 1);
  s.w_out = op::concat(op::slice(p.w_out, 0, p.d_r, p.d_r),
                       op::slice(p.w_out, 0, 0, p.d_r), 0);
  return s;
}

AttnParams AttnParams::init(int64_t d, int64_t d_k, std::mt19937_64& rng) {
  if (d < 1 || d_k < 1) throw ConfigError("AttnParams: dims must be positive");
  AttnParams p;
  p.d = d;
  p.d_k = d_k;
  double s = 1.0 / std::sqrt(double(d));
  p.wq = randn(rng, {d, d_k}, s);
  p.wk = randn(rng, {d, d_k}, s);
  p.wv = randn(rng, {d, d_k}, s);
  p.wo = randn(rng, {d_k, d}, 1.0 / std::sqrt(double(d_k)));
  return p;
}

std::vector<std::pair<std::string, Tensor*>> AttnParams::named() {
  return {{"wq", &wq}, {"wk", &wk}, {"wv", &wv}, {"wo", &wo}};
}

Tensor attention_mixer(const Tensor& x, const AttnParams& p) {
  if (x.rank() != 3 || x.dim(2) != p.d)
    throw ShapeError("attention_mixer: x must be [B,T," + std::to_string(p.d) +
                     "], got " + shape_str(x.shape()));
  Tensor q = op::matmul(x, p.wq);
  Tensor k = op::matmul(x, p.wk);
  Tensor v = op::matmul(x, p.wv);
  Tensor scores = op::scale(op::bmm(q, op::permute(k, {0, 2, 1})),
                            1.0 / std::sqrt(double(p.d_k)));
  Tensor attn = op::softmax_last(scores);
  return op::matmul(op::bmm(attn, v), p.wo);
}

Tensor attention_mixer_streaming(const Tensor& x, const AttnParams& p) {
  if (x.rank() != 3 || x.dim(2) != p.d)
    throw ShapeError("attention_mixer_streaming: x must be [B,T," +
                     std::to_string(p.d) + "], got " + shape_str(x.shape()));
  NoGradScope ng;
  int64_t B = x.dim(0), T = x.dim(1), d = p.d, dk = p.d_k;
  Tensor q = op::matmul(x, p.wq);
  Tensor k = op::matmul(x, p.wk);
  Tensor v = op::matmul(x, p.wv);
  Tensor out = Tensor::zeros({B, T, d});
  const auto& K = kernels::active();
  std::vector<double> row(static_cast<size_t>(T));
  std::vector<double> ctx(static_cast<size_t>(dk));
  double inv_sqrt = 1.0 / std::sqrt(double(dk));
  for (int64_t b = 0; b < B; ++b) {
    const double* qb = q.data() + b * T * dk;
    const double* kb = k.data() + b * T * dk;
    const double* vb = v.data() + b * T * dk;
    double* ob = out.mut_data() + b * T * d;
    for (int64_t i = 0; i < T; ++i) {
      for (int64_t j = 0; j < T; ++j)
        row[static_cast<size_t>(j)] = K.dot(qb + i * dk, kb + j * dk, dk) * inv_sqrt;
      double m = K.max(row.data(), T);
      for (int64_t j = 0; j < T; ++j) row[static_cast<size_t>(j)] -= m;
      K.vexp(row.data(), row.data(), T);
      double invz = 1.0 / K.sum(row.data(), T);
      std::memset(ctx.data(), 0, ctx.size() * sizeof(double));
      for (int64_t j = 0; j < T; ++j)
        K.axpy(row[static_cast<size_t>(j)] * invz, vb + j * dk, ctx.data(), dk);
      double* orow = ob + i * d;
      for (int64_t pI = 0; pI < dk; ++pI)
        K.axpy(ctx[static_cast<size_t>(pI)], p.wo.data() + pI * d, orow, d);
    }
  }
  seal_output(out, "attention_mixer_streaming");
  return out;
}

}  // namespace tad
