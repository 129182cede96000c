#include "tad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"
#include "tad/common.hpp"
#include "tad/ops.hpp"
#include "tad/tape.hpp"
#include "tad/tensor_io.hpp"

namespace tad {

using nlohmann::json;

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(lr > 0) || !std::isfinite(lr)) bad("need lr > 0");
  if (batch_size < 1) bad("need batch_size >= 1");
  if (epochs < 1) bad("need epochs >= 1");
  if (warmup_steps < 0) bad("need warmup_steps >= 0");
  if (weight_decay < 0) bad("need weight_decay >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    bad("betas must lie in [0,1)");
  if (!(eps > 0)) bad("need eps > 0");
}

double lr_at(const TrainConfig& cfg, int64_t step, int64_t total_steps) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr * double(step) / double(cfg.warmup_steps);
  if (total_steps <= cfg.warmup_steps) return cfg.lr;
  double t = double(step - cfg.warmup_steps) / double(total_steps - cfg.warmup_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, t)));
}

AdamW::AdamW(std::vector<Tensor*> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      b1_(cfg.beta1),
      b2_(cfg.beta2),
      eps_(cfg.eps),
      wd_(cfg.weight_decay) {
  for (const Tensor* p : params_) {
    m_.emplace_back(static_cast<size_t>(p->numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p->numel()), 0.0);
  }
}

void AdamW::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

void AdamW::step(double lr) {
  ++t_;
  double c1 = 1.0 - std::pow(b1_, double(t_));
  double c2 = 1.0 - std::pow(b2_, double(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor* p = params_[i];
    if (!p->has_grad()) continue;
    Tensor g = p->grad_tensor();
    const double* gd = g.data();
    double* pd = p->mut_data();
    for (int64_t j = 0; j < p->numel(); ++j) {
      auto k = static_cast<size_t>(j);
      m_[i][k] = b1_ * m_[i][k] + (1.0 - b1_) * gd[j];
      v_[i][k] = b2_ * v_[i][k] + (1.0 - b2_) * gd[j] * gd[j];
      double mhat = m_[i][k] / c1;
      double vhat = v_[i][k] / c2;
      pd[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * pd[j]);
    }
  }
}

namespace {

std::vector<std::pair<std::string, Tensor*>> all_named(TadModel& model) {
  std::vector<std::pair<std::string, Tensor*>> v;
  for (auto& [name, t] : model.backbone.named())
    v.emplace_back("backbone." + name, t);
  for (auto& [name, t] : model.named()) v.emplace_back(name, t);
  return v;
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor*>& ps) {
  std::vector<std::vector<double>> s;
  for (const Tensor* p : ps)
    s.emplace_back(p->data(), p->data() + p->numel());
  return s;
}

void restore(const std::vector<Tensor*>& ps, const std::vector<std::vector<double>>& s) {
  for (size_t i = 0; i < ps.size(); ++i)
    std::memcpy(ps[i]->mut_data(), s[i].data(), s[i].size() * 8);
}

PredictionMap predict_tokens(const TadModel& model, const std::vector<Tensor>& tokens,
                             const AnnotationSet& annos, const NmsConfig& nms) {
  NoGradScope ng;
  PredictionMap preds;
  for (size_t i = 0; i < tokens.size(); ++i) {
    HeadOutputs out = model.forward(tokens[i]);
    auto inst = decode_instances(out, model.dcfg, model.duration_sec());
    preds[annos.videos[i].id] = soft_nms(std::move(inst), nms);
  }
  return preds;
}

}  // namespace

PredictionMap predict(const TadModel& model, const SynthDataset& data,
                      const NmsConfig& nms) {
  NoGradScope ng;
  std::vector<Tensor> tokens;
  for (const Tensor& v : data.videos)
    tokens.push_back(patch_embed(v, model.bcfg, model.backbone));
  return predict_tokens(model, tokens, data.annos, nms);
}

TrainResult train(TadModel& model, const SynthDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const auto n = int64_t(data.videos.size());
  if (n == 0) throw ConfigError("train: empty dataset");
  if (int64_t(data.annos.labels.size()) != model.dcfg.n_classes)
    throw ConfigError("train: dataset has " + std::to_string(data.annos.labels.size()) +
                      " classes but the model expects " +
                      std::to_string(model.dcfg.n_classes));
  for (const auto& v : data.annos.videos)
    if (v.duration != model.duration_sec())
      throw ConfigError("train: video '" + v.id + "' lasts " +
                        std::to_string(v.duration) + " s but the model covers " +
                        std::to_string(model.duration_sec()) + " s");

  // the embedding is frozen, so tokens are computed exactly once
  std::vector<Tensor> tokens;
  std::vector<std::vector<LevelTargets>> targets;
  {
    NoGradScope ng;
    std::vector<int64_t> lens;
    int64_t len = model.bcfg.grid().t;
    for (int64_t l = 0; l < model.dcfg.n_levels; ++l, len /= 2) lens.push_back(len);
    for (int64_t i = 0; i < n; ++i) {
      tokens.push_back(patch_embed(data.videos[static_cast<size_t>(i)], model.bcfg,
                                   model.backbone));
      targets.push_back(assign_targets(
          data.annos.videos[static_cast<size_t>(i)].annotations, model.dcfg, lens));
    }
  }

  std::vector<Tensor*> ps;
  for (auto& [name, t] : model.named()) ps.push_back(t);
  AdamW opt(ps, cfg);
  int64_t steps_per = (n + cfg.batch_size - 1) / cfg.batch_size;
  int64_t total_steps = steps_per * cfg.epochs;

  TrainResult res;
  auto last_good = snapshot(ps);
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(cfg.shuffle_seed + uint64_t(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double ep_cls = 0, ep_reg = 0;
    int64_t batches = 0;
    bool numeric_failure = false;
    for (int64_t b0 = 0; b0 < n && !numeric_failure; b0 += cfg.batch_size) {
      int64_t b1 = std::min(n, b0 + cfg.batch_size);
      try {
        Tape tape;
        TapeScope scope(tape);
        Tensor batch_total;
        double bc = 0, br = 0;
        for (int64_t i = b0; i < b1; ++i) {
          auto vi = static_cast<size_t>(order[static_cast<size_t>(i)]);
          HeadOutputs out = model.forward(tokens[vi]);
          LossParts lp = detection_loss(out, targets[vi], model.dcfg);
          batch_total = (i == b0) ? lp.total : op::add(batch_total, lp.total);
          bc += lp.cls;
          br += lp.reg;
        }
        double inv = 1.0 / double(b1 - b0);
        Tensor avg = op::scale(batch_total, inv);
        if (!std::isfinite(avg.data()[0]))
          throw NumericError("train: non-finite batch loss");
        opt.zero_grad();
        tape.backward(avg);
        opt.step(lr_at(cfg, res.steps_done, total_steps));
        ++res.steps_done;
        ep_cls += bc * inv;
        ep_reg += br * inv;
        ++batches;
      } catch (const NumericError&) {
        numeric_failure = true;
      }
    }
    if (!numeric_failure) {
      try {
        MetricReport rep =
            evaluate(predict_tokens(model, tokens, data.annos, cfg.nms), data.annos);
        EpochStats st;
        st.epoch = epoch;
        st.loss_cls = ep_cls / double(batches);
        st.loss_reg = ep_reg / double(batches);
        st.map50 = rep.map_per_threshold[2];  // default thresholds: 0.3..0.7
        st.avg_map = rep.average_map;
        res.log.push_back(st);
        res.report = std::move(rep);
        last_good = snapshot(ps);
      } catch (const NumericError&) {
        numeric_failure = true;
      }
    }
    if (numeric_failure) {
      restore(ps, last_good);
      res.aborted = true;
      break;
    }
  }
  return res;
}

void save_checkpoint(TadModel& model, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(dir + ": cannot create directory: " + ec.message());
  json manifest;
  manifest["version"] = 1;
  manifest["tensors"] = json::array();
  for (auto& [name, t] : all_named(model)) {
    manifest["tensors"].push_back(name);
    save_tensor(dir + "/" + name + ".tnsr", *t);
  }
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw IoError(dir + "/manifest.json: cannot open for writing");
  f << manifest.dump(2) << "\n";
  if (!f) throw IoError(dir + "/manifest.json: write failed");
}

void load_checkpoint(TadModel& model, const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw IoError(dir + "/manifest.json: cannot open");
  json manifest;
  try {
    f >> manifest;
  } catch (const json::parse_error& e) {
    throw IoError(dir + "/manifest.json: " + e.what());
  }
  if (!manifest.is_object() || !manifest.count("tensors") ||
      !manifest["tensors"].is_array())
    throw IoError(dir + "/manifest.json: /tensors: expected an array");
  std::vector<std::string> listed;
  for (const auto& e : manifest["tensors"]) {
    if (!e.is_string())
      throw IoError(dir + "/manifest.json: /tensors: expected strings");
    listed.push_back(e.get<std::string>());
  }
  auto named = all_named(model);
  std::vector<std::string> expect;
  for (auto& [name, t] : named) expect.push_back(name);
  auto sorted = [](std::vector<std::string> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  if (sorted(listed) != sorted(expect))
    throw ConfigError("checkpoint at " + dir +
                      " does not match the model's parameter set");
  for (auto& [name, t] : named) {
    Tensor loaded = load_tensor(dir + "/" + name + ".tnsr");
    if (loaded.shape() != t->shape())
      throw ConfigError("checkpoint tensor '" + name + "' has the wrong shape");
    std::memcpy(t->mut_data(), loaded.data(),
                static_cast<size_t>(t->numel()) * 8);
  }
}

void write_train_log(const std::vector<EpochStats>& log, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError(path + ": cannot open for writing");
  f << "epoch,loss_cls,loss_reg,map50,avg_map\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%lld,%.6f,%.6f,%.6f,%.6f\n",
                  (long long)e.epoch, e.loss_cls, e.loss_reg, e.map50, e.avg_map);
    f << buf;
  }
  if (!f) throw IoError(path + ": write failed");
}

}  // namespace tad
