#include "tad/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tad/ops.hpp"
#include "tad/tape.hpp"

namespace tad {

std::pair<double, double> DetectorConfig::level_range(int64_t level) const {
  double lo = 0, hi = std::numeric_limits<double>::infinity();
  auto bound = [&](int64_t i) {
    return range_bounds.empty() ? token_sec * 4.0 * double(int64_t(1) << i)
                                : range_bounds[static_cast<size_t>(i)];
  };
  if (level > 0) lo = bound(level - 1);
  if (level < n_levels - 1) hi = bound(level);
  return {lo, hi};
}

void DetectorConfig::validate() const {
  if (n_classes < 1) throw ConfigError("detector: n_classes must be >= 1");
  if (n_levels < 1) throw ConfigError("detector: n_levels must be >= 1");
  if (!(token_sec > 0)) throw ConfigError("detector: token_sec must be > 0");
  if (!range_bounds.empty()) {
    if (int64_t(range_bounds.size()) != n_levels - 1)
      throw ConfigError("detector: need " + std::to_string(n_levels - 1) +
                        " range bounds, got " + std::to_string(range_bounds.size()));
    double prev = 0;
    for (double b : range_bounds) {
      if (!(b > prev))
        throw ConfigError("detector: range bounds must be positive increasing");
      prev = b;
    }
  }
  if (score_thresh < 0 || score_thresh >= 1)
    throw ConfigError("detector: score_thresh must be in [0,1)");
}

Tensor spatial_mean(const Tensor& tokens, const TokenGrid& g) {
  if (tokens.rank() != 2 || tokens.dim(0) != g.numel())
    throw ShapeError("spatial_mean: tokens " + shape_str(tokens.shape()) +
                     " vs grid with " + std::to_string(g.numel()) + " cells");
  return op::mean_axis(op::reshape(tokens, {g.t, g.h * g.w, tokens.dim(1)}), 1);
}

PyramidFeatures build_pyramid(const Tensor& tokens, int64_t n_levels, bool mean_pool) {
  if (tokens.rank() != 2)
    throw ShapeError("build_pyramid: want [T,D], got " + shape_str(tokens.shape()));
  if (n_levels < 1) throw ConfigError("build_pyramid: need at least one level");
  int64_t T = tokens.dim(0), need = int64_t(1) << (n_levels - 1);
  if (T % need != 0 || T / need < 1) {
    int64_t feasible = 1;
    while (T % (int64_t(1) << feasible) == 0) ++feasible;
    throw ConfigError("build_pyramid: T=" + std::to_string(T) + " supports at most " +
                      std::to_string(feasible) + " levels (T must be divisible by 2^(levels-1)), got " +
                      std::to_string(n_levels));
  }
  PyramidFeatures pyr;
  pyr.levels.push_back(tokens);
  for (int64_t i = 1; i < n_levels; ++i) {
    const Tensor& prev = pyr.levels.back();
    if (mean_pool)
      pyr.levels.push_back(op::mean_axis(
          op::reshape(prev, {prev.dim(0) / 2, 2, prev.dim(1)}), 1));
    else
      pyr.levels.push_back(op::maxpool_time(prev));
  }
  return pyr;
}

HeadParams HeadParams::init(int64_t d_model, int64_t n_classes, std::mt19937_64& rng) {
  HeadParams p;
  p.k_time = randn(rng, {d_model, 3}, 1.0 / std::sqrt(3.0));
  p.w0 = randn(rng, {d_model, d_model}, 1.0 / std::sqrt(double(d_model)));
  p.b0 = Tensor::zeros({d_model});
  p.cls_w = randn(rng, {d_model, n_classes + 1}, 0.01);
  p.cls_b = Tensor::zeros({n_classes + 1});
  p.reg_w = randn(rng, {d_model, 2}, 0.01);
  p.reg_b = Tensor::zeros({2});
  return p;
}

std::vector<std::pair<std::string, Tensor*>> HeadParams::named() {
  return {{"k_time", &k_time}, {"w0", &w0},       {"b0", &b0},
          {"cls_w", &cls_w},   {"cls_b", &cls_b}, {"reg_w", &reg_w},
          {"reg_b", &reg_b}};
}

HeadOutputs head_forward(const PyramidFeatures& pyr, const HeadParams& p) {
  HeadOutputs out;
  for (const Tensor& level : pyr.levels) {
    int64_t T = level.dim(0), D = level.dim(1);
    Tensor c = op::reshape(op::dwconv1d(op::reshape(level, {1, T, D}), p.k_time),
                           {T, D});
    Tensor h = op::silu(op::add_rowvec(op::matmul(c, p.w0), p.b0));
    out.logits.push_back(op::add_rowvec(op::matmul(h, p.cls_w), p.cls_b));
    out.offsets.push_back(op::softplus(op::add_rowvec(op::matmul(h, p.reg_w), p.reg_b)));
  }
  return out;
}

std::vector<ActionInstance> decode_instances(const HeadOutputs& out,
                                             const DetectorConfig& cfg,
                                             double duration_sec) {
  if (!(duration_sec > 0))
    throw ConfigError("decode_instances: duration must be positive");
  std::vector<ActionInstance> res;
  int64_t C = cfg.n_classes;
  for (size_t i = 0; i < out.logits.size(); ++i) {
    const Tensor& lg = out.logits[i];
    const Tensor& of = out.offsets[i];
    double sigma = cfg.sigma_sec(int64_t(i));
    int64_t T = lg.dim(0), W = lg.dim(1);
    std::vector<double> p(static_cast<size_t>(W));
    for (int64_t t = 0; t < T; ++t) {
      const double* row = lg.data() + t * W;
      double m = *std::max_element(row, row + W), z = 0;
      for (int64_t c = 0; c < W; ++c) z += (p[static_cast<size_t>(c)] = std::exp(row[c] - m));
      double tau = cfg.tau(int64_t(i), t);
      for (int64_t c = 0; c < C; ++c) {
        double score = p[static_cast<size_t>(c)] / z;
        if (score < cfg.score_thresh) continue;
        ActionInstance a;
        a.t_start = std::max(0.0, tau - of.data()[t * 2] * sigma);
        a.t_end = std::min(duration_sec, tau + of.data()[t * 2 + 1] * sigma);
        a.label = int(c);
        a.score = score;
        if (!(a.t_end > a.t_start))
          throw NumericError("decode_instances: degenerate segment");
        res.push_back(a);
      }
    }
  }
  return res;
}

std::vector<LevelTargets> assign_targets(const std::vector<GroundTruthInstance>& gts,
                                         const DetectorConfig& cfg,
                                         const std::vector<int64_t>& level_lens) {
  cfg.validate();
  if (int64_t(level_lens.size()) != cfg.n_levels)
    throw ConfigError("assign_targets: got " + std::to_string(level_lens.size()) +
                      " level lengths for " + std::to_string(cfg.n_levels) + " levels");
  for (const auto& g : gts) {
    if (!(g.t_end > g.t_start))
      throw ConfigError("assign_targets: ground truth must satisfy t_end > t_start");
    if (g.label < 0 || g.label >= cfg.n_classes)
      throw ConfigError("assign_targets: label " + std::to_string(g.label) +
                        " outside [0," + std::to_string(cfg.n_classes) + ")");
  }
  std::vector<LevelTargets> res(level_lens.size());
  for (int64_t i = 0; i < cfg.n_levels; ++i) {
    auto [lo, hi] = cfg.level_range(i);
    double sigma = cfg.sigma_sec(i);
    LevelTargets& lt = res[static_cast<size_t>(i)];
    int64_t T = level_lens[static_cast<size_t>(i)];
    lt.cls.assign(static_cast<size_t>(T), cfg.n_classes);
    lt.d_start.assign(static_cast<size_t>(T), 0.0);
    lt.d_end.assign(static_cast<size_t>(T), 0.0);
    for (int64_t t = 0; t < T; ++t) {
      double tau = cfg.tau(i, t);
      int best = -1;
      double best_dur = std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < gts.size(); ++j) {
        const auto& g = gts[j];
        if (tau < g.t_start || tau > g.t_end) continue;
        double dur = g.t_end - g.t_start;
        if (dur < lo || dur >= hi) continue;
        if (dur < best_dur) {
          best = int(j);
          best_dur = dur;
        }
      }
      if (best >= 0) {
        const auto& g = gts[static_cast<size_t>(best)];
        lt.cls[static_cast<size_t>(t)] = g.label;
        lt.d_start[static_cast<size_t>(t)] = (tau - g.t_start) / sigma;
        lt.d_end[static_cast<size_t>(t)] = (g.t_end - tau) / sigma;
      }
    }
  }
  return res;
}

LossParts detection_loss(const HeadOutputs& out,
                         const std::vector<LevelTargets>& targets,
                         const DetectorConfig& cfg) {
  if (out.logits.size() != targets.size())
    throw ShapeError("detection_loss: " + std::to_string(out.logits.size()) +
                     " prediction levels vs " + std::to_string(targets.size()) +
                     " target levels");
  Tensor all_logits = out.logits[0], all_offs = out.offsets[0];
  for (size_t i = 1; i < out.logits.size(); ++i) {
    all_logits = op::concat(all_logits, out.logits[i], 0);
    all_offs = op::concat(all_offs, out.offsets[i], 0);
  }

  std::vector<int64_t> idx, pos_rows;
  std::vector<double> alpha, tau_v, sig_v, gs_v, ge_v;
  int64_t row = 0;
  for (size_t i = 0; i < targets.size(); ++i) {
    const LevelTargets& lt = targets[i];
    if (int64_t(lt.cls.size()) != out.logits[i].dim(0))
      throw ShapeError("detection_loss: level " + std::to_string(i) + " has " +
                       std::to_string(out.logits[i].dim(0)) + " timesteps but " +
                       std::to_string(lt.cls.size()) + " targets");
    double sigma = cfg.sigma_sec(int64_t(i));
    for (size_t t = 0; t < lt.cls.size(); ++t, ++row) {
      bool fg = lt.cls[t] != cfg.n_classes;
      idx.push_back(lt.cls[t]);
      alpha.push_back(fg ? 0.25 : 0.75);
      if (fg) {
        double tau = cfg.tau(int64_t(i), int64_t(t));
        pos_rows.push_back(row);
        tau_v.push_back(tau);
        sig_v.push_back(sigma);
        gs_v.push_back(tau - lt.d_start[t] * sigma);
        ge_v.push_back(tau + lt.d_end[t] * sigma);
      }
    }
  }
  int64_t n = row, npos = int64_t(pos_rows.size());
  double norm = 1.0 / double(std::max<int64_t>(1, npos));

  Tensor logp = op::log_softmax_last(all_logits);
  Tensor ly = op::select_last(logp, idx);
  Tensor py = op::exp(ly);
  Tensor onem = op::add_scalar(op::neg(py), 1.0);
  Tensor aw = Tensor::from_data({n}, alpha);
  Tensor cls = op::scale(
      op::sum_all(op::mul(op::mul(aw, op::mul(onem, onem)), op::neg(ly))), norm);

  LossParts parts;
  parts.n_pos = npos;
  if (npos > 0) {
    Tensor offs = op::gather_rows(all_offs, pos_rows);
    Tensor ds = op::slice(offs, 1, 0, 1), de = op::slice(offs, 1, 1, 1);
    Tensor tc = Tensor::from_data({npos, 1}, tau_v);
    Tensor sc = Tensor::from_data({npos, 1}, sig_v);
    Tensor gs = Tensor::from_data({npos, 1}, gs_v);
    Tensor ge = Tensor::from_data({npos, 1}, ge_v);
    Tensor ps = op::sub(tc, op::mul(ds, sc));
    Tensor pe = op::add(tc, op::mul(de, sc));
    Tensor inter = op::relu(op::sub(op::minimum(pe, ge), op::maximum(ps, gs)));
    Tensor uni = op::sub(op::add(op::sub(pe, ps), op::sub(ge, gs)), inter);
    Tensor iou = op::div(inter, uni);
    Tensor cen = op::scale(op::sub(op::add(ps, pe), op::add(gs, ge)), 0.5);
    Tensor enc = op::sub(op::maximum(pe, ge), op::minimum(ps, gs));
    Tensor diou = op::add(op::add_scalar(op::neg(iou), 1.0),
                          op::div(op::mul(cen, cen), op::mul(enc, enc)));
    Tensor reg = op::scale(op::sum_all(diou), norm);
    parts.total = op::add(cls, op::scale(reg, cfg.lambda_reg));
    parts.reg = reg.data()[0];
  } else {
    parts.total = cls;
    parts.reg = 0.0;
  }
  parts.cls = cls.data()[0];
  return parts;
}

TadModel TadModel::init(const BackboneConfig& bc, const EstfConfig& ac,
                        const DetectorConfig& dc, uint64_t seed, bool with_adapters) {
  if (ac.d_model != bc.d_model)
    throw ConfigError("model: adapter d_model " + std::to_string(ac.d_model) +
                      " != backbone d_model " + std::to_string(bc.d_model));
  dc.validate();
  ac.validate(bc.grid());
  TadModel m;
  m.bcfg = bc;
  m.acfg = ac;
  m.dcfg = dc;
  std::mt19937_64 rng(seed);
  m.backbone = BackboneParams::init(bc, rng);
  if (with_adapters)
    for (int64_t l = 0; l < bc.depth; ++l)
      m.adapters.push_back(EstfParams::init(ac, rng));
  m.head = HeadParams::init(bc.d_model, dc.n_classes, rng);
  for (auto& [name, t] : m.named()) t->set_requires_grad(true);
  return m;
}

std::vector<std::pair<std::string, Tensor*>> TadModel::named() {
  std::vector<std::pair<std::string, Tensor*>> v;
  for (size_t l = 0; l < adapters.size(); ++l)
    for (auto& [name, t] : adapters[l].named())
      v.emplace_back("adapter" + std::to_string(l) + "." + name, t);
  for (auto& [name, t] : head.named()) v.emplace_back("head." + name, t);
  return v;
}

HeadOutputs TadModel::forward(const Tensor& tokens) const {
  TokenGrid g = bcfg.grid();
  Tensor x = backbone_forward(tokens, backbone, adapters, acfg, g);
  PyramidFeatures pyr =
      build_pyramid(spatial_mean(x, g), dcfg.n_levels, dcfg.mean_pool_neck);
  return head_forward(pyr, head);
}

double TadModel::duration_sec() const {
  return double(bcfg.grid().t) * dcfg.token_sec;
}

}  // namespace tad
