#include "tad/estf.hpp"

#include <cmath>
#include <string>

#include "tad/ops.hpp"
#include "tad/tape.hpp"

namespace tad {

namespace {

// depthwise conv along the time axis of a [T,H,W,C] grid
Tensor conv_time(const Tensor& z, const Tensor& k, const TokenGrid& g) {
  Tensor p = op::permute(z, {1, 2, 0, 3});  // [H,W,T,C]
  Tensor c = op::dwconv1d(op::reshape(p, {g.h * g.w, g.t, z.dim(3)}), k);
  return op::permute(op::reshape(c, {g.h, g.w, g.t, z.dim(3)}), {2, 0, 1, 3});
}

// temporal mixer over a pooled [T,hp,wp,C] grid; each pooled spatial cell is
// an independent sequence
Tensor run_mixer(const Tensor& pooled, const EstfParams& p, const EstfConfig& cfg) {
  if (cfg.mixer == TemporalMixer::none) return pooled;
  int64_t T = pooled.dim(0), hp = pooled.dim(1), wp = pooled.dim(2),
          c = pooled.dim(3);
  Tensor s = op::reshape(op::permute(pooled, {1, 2, 0, 3}), {hp * wp, T, c});
  Tensor m = cfg.mixer == TemporalMixer::tbssm ? tb_ssm(s, p.ssm, cfg.ssm)
                                               : attention_mixer(s, p.attn);
  return op::permute(op::reshape(m, {hp, wp, T, c}), {2, 0, 1, 3});
}

int64_t sum_named(std::vector<std::pair<std::string, Tensor*>> v) {
  int64_t n = 0;
  for (auto& [name, t] : v) n += t->numel();
  return n;
}

}  // namespace

void EstfConfig::validate(const TokenGrid& g) const {
  if (d_model <= 0 || rank <= 0)
    throw ConfigError("estf: d_model and rank must be positive");
  if (rank >= d_model)
    throw ConfigError("estf: rank " + std::to_string(rank) +
                      " must be < d_model " + std::to_string(d_model));
  if (d_state < 1) throw ConfigError("estf: d_state must be >= 1");
  for (auto [k, which] : {std::pair{k_spatial, "k_spatial"}, {k_temporal, "k_temporal"}})
    if (k < 1 || k % 2 == 0)
      throw ConfigError(std::string("estf: ") + which + " must be odd, got " +
                        std::to_string(k));
  if (g.t < 1 || g.h < 1 || g.w < 1)
    throw ConfigError("estf: token grid extents must be positive");
  if (pool_h < 1 || pool_w < 1 || g.h % pool_h != 0 || g.w % pool_w != 0)
    throw ConfigError("estf: pool factor (" + std::to_string(pool_h) + "," +
                      std::to_string(pool_w) + ") must divide spatial grid (" +
                      std::to_string(g.h) + "," + std::to_string(g.w) + ")");
}

EstfParams EstfParams::init(const EstfConfig& cfg, std::mt19937_64& rng) {
  EstfParams p;
  double k2 = double(cfg.k_spatial);
  p.w_down = randn(rng, {cfg.d_model, cfg.rank}, 1.0 / std::sqrt(double(cfg.d_model)));
  p.w_up = Tensor::zeros({cfg.rank, cfg.d_model});
  p.k_spatial1 = randn(rng, {cfg.rank, cfg.k_spatial, cfg.k_spatial}, 1.0 / k2);
  p.k_spatial2 = randn(rng, {cfg.rank, cfg.k_spatial, cfg.k_spatial}, 1.0 / k2);
  p.k_temporal = randn(rng, {cfg.rank, cfg.k_temporal},
                       1.0 / std::sqrt(double(cfg.k_temporal)));
  p.ssm = TbSsmParams::init(cfg.rank, cfg.d_state, rng);
  if (cfg.mixer == TemporalMixer::attention)
    p.attn = AttnParams::init(cfg.rank, cfg.rank, rng);
  return p;
}

std::vector<std::pair<std::string, Tensor*>> EstfParams::named() {
  std::vector<std::pair<std::string, Tensor*>> v = {
      {"w_down", &w_down},         {"w_up", &w_up},
      {"k_spatial1", &k_spatial1}, {"k_spatial2", &k_spatial2},
      {"k_temporal", &k_temporal},
  };
  for (auto& [name, t] : ssm.named()) v.emplace_back("ssm." + name, t);
  if (attn.d > 0)
    for (auto& [name, t] : attn.named()) v.emplace_back("attn." + name, t);
  return v;
}

int64_t EstfParams::numel() const {
  return sum_named(const_cast<EstfParams*>(this)->named());
}

Tensor estf_forward(const Tensor& x, const EstfParams& p, const TokenGrid& g,
                    const EstfConfig& cfg) {
  cfg.validate(g);
  if (x.rank() != 2 || x.dim(1) != cfg.d_model)
    throw ShapeError("estf_forward: x must be [N," + std::to_string(cfg.d_model) +
                     "], got " + shape_str(x.shape()));
  if (x.dim(0) != g.numel())
    throw ShapeError("estf_forward: x has " + std::to_string(x.dim(0)) +
                     " tokens but grid " + std::to_string(g.t) + "x" +
                     std::to_string(g.h) + "x" + std::to_string(g.w) + " needs " +
                     std::to_string(g.numel()));
  if (cfg.mixer == TemporalMixer::attention && p.attn.d == 0)
    throw ConfigError("estf_forward: adapter was built without attention weights");

  Tensor z = op::reshape(op::matmul(x, p.w_down), {g.t, g.h, g.w, cfg.rank});

  Tensor zs_mid, zt_full;  // pre-fusion outputs of the two branches
  if (cfg.spatial_branch) zs_mid = op::dwconv2d(z, p.k_spatial1);
  if (cfg.temporal_branch) zt_full = conv_time(z, p.k_temporal, g);

  Tensor zt;  // pooled and mixed temporal stream, [T, h/ph, w/pw, D_r]
  if (cfg.temporal_branch) {
    Tensor pool_in = (cfg.spatial_branch && cfg.cross_fusion)
                         ? op::add(zt_full, zs_mid)
                         : zt_full;
    zt = run_mixer(op::avgpool_spatial(pool_in, cfg.pool_h, cfg.pool_w), p, cfg);
  }

  Tensor zs;
  if (cfg.spatial_branch) {
    Tensor conv_in = zs_mid;
    if (cfg.temporal_branch && cfg.cross_fusion) {
      Tensor u = cfg.fusion == FusionMode::literal
                     ? zt_full
                     : op::upsample_nearest(zt, cfg.pool_h, cfg.pool_w);
      conv_in = op::add(zs_mid, u);
    }
    zs = op::dwconv2d(conv_in, p.k_spatial2);
  }

  Tensor acc = z;
  if (cfg.spatial_branch) acc = op::add(acc, zs);
  if (cfg.temporal_branch)
    acc = op::add(acc, op::upsample_nearest(zt, cfg.pool_h, cfg.pool_w));
  return op::matmul(op::reshape(acc, {g.numel(), cfg.rank}), p.w_up);
}

TokenGrid BackboneConfig::grid() const {
  std::string bad;
  auto check = [&](int64_t extent, int64_t patch, const char* axis) {
    if (patch < 1)
      throw ConfigError(std::string("backbone: ") + axis + " patch size must be >= 1");
    if (extent < 1 || extent % patch != 0) {
      int64_t padded = ((extent + patch - 1) / patch) * patch;
      bad += std::string(bad.empty() ? "" : "; ") + axis + " " +
             std::to_string(extent) + " not divisible by patch " +
             std::to_string(patch) + " (pad to " + std::to_string(padded) + ")";
    }
  };
  check(frames, t_patch, "frames");
  check(height, h_patch, "height");
  check(width, w_patch, "width");
  if (!bad.empty()) throw ConfigError("backbone: " + bad);
  return {frames / t_patch, height / h_patch, width / w_patch};
}

BackboneParams BackboneParams::init(const BackboneConfig& cfg, std::mt19937_64& rng) {
  TokenGrid g = cfg.grid();
  int64_t D = cfg.d_model, Dh = 2 * D;
  BackboneParams p;
  p.w_patch = randn(rng, {cfg.patch_len(), D}, 1.0 / std::sqrt(double(cfg.patch_len())));
  p.e_pos = randn(rng, {g.numel(), D}, 0.02);
  p.blocks.resize(static_cast<size_t>(cfg.depth));
  for (auto& b : p.blocks) {
    b.ln_gamma = Tensor::full({D}, 1.0);
    b.ln_beta = Tensor::zeros({D});
    b.w1 = randn(rng, {D, Dh}, 1.0 / std::sqrt(double(D)));
    b.b1 = Tensor::zeros({Dh});
    b.w2 = randn(rng, {Dh, D}, 1.0 / std::sqrt(double(Dh)));
    b.b2 = Tensor::zeros({D});
  }
  return p;
}

std::vector<const Tensor*> BackboneParams::all() const {
  std::vector<const Tensor*> v = {&w_patch, &e_pos};
  for (const auto& b : blocks)
    for (const Tensor* t : {&b.ln_gamma, &b.ln_beta, &b.w1, &b.b1, &b.w2, &b.b2})
      v.push_back(t);
  return v;
}

std::vector<std::pair<std::string, Tensor*>> BackboneParams::named() {
  std::vector<std::pair<std::string, Tensor*>> v = {{"w_patch", &w_patch},
                                                    {"e_pos", &e_pos}};
  for (size_t i = 0; i < blocks.size(); ++i) {
    std::string p = "block" + std::to_string(i) + ".";
    auto& b = blocks[i];
    v.emplace_back(p + "ln_gamma", &b.ln_gamma);
    v.emplace_back(p + "ln_beta", &b.ln_beta);
    v.emplace_back(p + "w1", &b.w1);
    v.emplace_back(p + "b1", &b.b1);
    v.emplace_back(p + "w2", &b.w2);
    v.emplace_back(p + "b2", &b.b2);
  }
  return v;
}

int64_t BackboneParams::numel() const {
  int64_t n = 0;
  for (const Tensor* t : all()) n += t->numel();
  return n;
}

Tensor patch_embed(const Tensor& video, const BackboneConfig& cfg,
                   const BackboneParams& p) {
  if (video.rank() != 4 || video.dim(0) != cfg.frames ||
      video.dim(1) != cfg.height || video.dim(2) != cfg.width ||
      video.dim(3) != cfg.channels_in)
    throw ShapeError("patch_embed: video " + shape_str(video.shape()) +
                     " does not match configured extents [" +
                     std::to_string(cfg.frames) + "," + std::to_string(cfg.height) +
                     "," + std::to_string(cfg.width) + "," +
                     std::to_string(cfg.channels_in) + "]");
  TokenGrid g = cfg.grid();
  int64_t pl = cfg.patch_len();
  if (p.w_patch.dim(0) != pl || p.w_patch.dim(1) != cfg.d_model)
    throw ShapeError("patch_embed: projection is " + shape_str(p.w_patch.shape()) +
                     ", need [" + std::to_string(pl) + "," +
                     std::to_string(cfg.d_model) + "]");

  NoGradScope ng;  // everything here precedes the first trainable parameter
  Tensor rows = Tensor::zeros({g.numel(), pl});
  const double* v = video.data();
  double* r = rows.mut_data();
  int64_t H = cfg.height, W = cfg.width, C = cfg.channels_in;
  for (int64_t tt = 0; tt < g.t; ++tt)
    for (int64_t hh = 0; hh < g.h; ++hh)
      for (int64_t ww = 0; ww < g.w; ++ww) {
        int64_t row = (tt * g.h + hh) * g.w + ww;
        int64_t col = 0;
        for (int64_t dt = 0; dt < cfg.t_patch; ++dt)
          for (int64_t dh = 0; dh < cfg.h_patch; ++dh)
            for (int64_t dw = 0; dw < cfg.w_patch; ++dw)
              for (int64_t c = 0; c < C; ++c)
                r[row * pl + col++] =
                    v[(((tt * cfg.t_patch + dt) * H + hh * cfg.h_patch + dh) * W +
                       ww * cfg.w_patch + dw) *
                          C +
                      c];
      }
  return op::add(op::matmul(rows, p.w_patch), p.e_pos);
}

Tensor backbone_forward(const Tensor& x, const BackboneParams& bb,
                        const std::vector<EstfParams>& adapters,
                        const EstfConfig& acfg, const TokenGrid& g) {
  if (!adapters.empty() && adapters.size() != bb.blocks.size())
    throw ConfigError("backbone_forward: " + std::to_string(adapters.size()) +
                      " adapters for " + std::to_string(bb.blocks.size()) +
                      " blocks (pass one per block or none)");
  Tensor h = x;
  for (size_t l = 0; l < bb.blocks.size(); ++l) {
    const auto& blk = bb.blocks[l];
    Tensor m = op::layernorm(h, blk.ln_gamma, blk.ln_beta);
    m = op::silu(op::add_rowvec(op::matmul(m, blk.w1), blk.b1));
    m = op::add_rowvec(op::matmul(m, blk.w2), blk.b2);
    h = op::add(h, m);
    if (!adapters.empty())
      h = op::add(h, estf_forward(h, adapters[l], g, acfg));
  }
  return h;
}

ParamCount count_params(const BackboneParams& bb,
                        const std::vector<EstfParams>& adapters) {
  ParamCount c;
  for (const auto& a : adapters) c.trainable += a.numel();
  c.total = c.trainable + bb.numel();
  return c;
}

}  // namespace tad
