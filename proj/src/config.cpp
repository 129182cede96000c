#include "tad/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "tad/common.hpp"

namespace tad {

using nlohmann::json;

namespace {

json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw IoError(path + ": not valid JSON");
  return j;
}

// field readers sharing one error prefix, e.g. "cfg.json: /train"
struct ObjReader {
  const json& j;
  std::string prefix;

  void known(std::initializer_list<const char*> keys) const {
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool ok = false;
      for (const char* k : keys) ok = ok || it.key() == k;
      if (!ok) throw IoError(prefix + "/" + it.key() + ": unknown key");
    }
  }
  void geti(const char* k, int64_t& dst, int64_t min) const {
    if (!j.count(k)) return;
    if (!j[k].is_number_integer())
      throw IoError(prefix + "/" + k + ": expected an integer");
    dst = j[k].get<int64_t>();
    if (dst < min)
      throw IoError(prefix + "/" + k + ": must be >= " + std::to_string(min));
  }
  void getu(const char* k, uint64_t& dst) const {
    if (!j.count(k)) return;
    if (!j[k].is_number_unsigned() && !j[k].is_number_integer())
      throw IoError(prefix + "/" + k + ": expected an integer");
    dst = j[k].get<uint64_t>();
  }
  void getd(const char* k, double& dst, double min, bool open) const {
    if (!j.count(k)) return;
    if (!j[k].is_number()) throw IoError(prefix + "/" + k + ": expected a number");
    dst = j[k].get<double>();
    if (open ? !(dst > min) : !(dst >= min)) {
      char b[32];
      std::snprintf(b, sizeof b, "%g", min);
      throw IoError(prefix + "/" + k + (open ? ": must be > " : ": must be >= ") +
                    b);
    }
  }
  void getb(const char* k, bool& dst) const {
    if (!j.count(k)) return;
    if (!j[k].is_boolean()) throw IoError(prefix + "/" + k + ": expected a boolean");
    dst = j[k].get<bool>();
  }
};

void read_model(const json& j, const std::string& prefix, ModelConfig& mc) {
  if (!j.is_object()) throw IoError(prefix + ": expected an object");
  ObjReader r{j, prefix};
  r.known({"d_model", "depth", "rank", "d_state", "patch", "pool", "n_levels",
           "seed"});
  r.geti("d_model", mc.d_model, 1);
  r.geti("depth", mc.depth, 1);
  r.geti("rank", mc.rank, 1);
  r.geti("d_state", mc.d_state, 1);
  r.geti("n_levels", mc.n_levels, 1);
  r.getu("seed", mc.seed);
  auto tuple = [&](const char* k, std::initializer_list<int64_t*> dst) {
    if (!j.count(k)) return;
    const json& a = j[k];
    if (!a.is_array() || a.size() != dst.size())
      throw IoError(prefix + "/" + k + ": expected " + std::to_string(dst.size()) +
                    " integers");
    size_t i = 0;
    for (int64_t* d : dst) {
      if (!a[i].is_number_integer() || a[i].get<int64_t>() < 1)
        throw IoError(prefix + "/" + k + "/" + std::to_string(i) +
                      ": expected a positive integer");
      *d = a[i++].get<int64_t>();
    }
  };
  tuple("patch", {&mc.t_patch, &mc.h_patch, &mc.w_patch});
  tuple("pool", {&mc.pool_h, &mc.pool_w});
}

void read_train(const json& j, const std::string& prefix, TrainConfig& tc) {
  if (!j.is_object()) throw IoError(prefix + ": expected an object");
  ObjReader r{j, prefix};
  r.known({"lr", "batch_size", "epochs", "warmup_steps", "weight_decay", "beta1",
           "beta2", "eps", "shuffle_seed", "nms"});
  r.getd("lr", tc.lr, 0.0, true);
  r.geti("batch_size", tc.batch_size, 1);
  r.geti("epochs", tc.epochs, 1);
  r.geti("warmup_steps", tc.warmup_steps, 0);
  r.getd("weight_decay", tc.weight_decay, 0.0, false);
  r.getd("beta1", tc.beta1, 0.0, false);
  r.getd("beta2", tc.beta2, 0.0, false);
  r.getd("eps", tc.eps, 0.0, true);
  r.getu("shuffle_seed", tc.shuffle_seed);
  if (j.count("nms")) {
    const json& n = j["nms"];
    std::string np = prefix + "/nms";
    if (!n.is_object()) throw IoError(np + ": expected an object");
    ObjReader rn{n, np};
    rn.known({"method", "sigma", "iou_threshold", "score_floor", "per_class"});
    if (n.count("method")) {
      if (!n["method"].is_string())
        throw IoError(np + "/method: expected a string");
      std::string m = n["method"].get<std::string>();
      if (m == "gaussian")
        tc.nms.method = NmsMethod::gaussian;
      else if (m == "linear")
        tc.nms.method = NmsMethod::linear;
      else if (m == "hard")
        tc.nms.method = NmsMethod::hard;
      else
        throw IoError(np + "/method: want 'gaussian', 'linear' or 'hard', got '" +
                      m + "'");
    }
    rn.getd("sigma", tc.nms.sigma, 0.0, true);
    rn.getd("iou_threshold", tc.nms.iou_threshold, 0.0, false);
    rn.getd("score_floor", tc.nms.score_floor, 0.0, false);
    rn.getb("per_class", tc.nms.per_class);
  }
  tc.validate();
}

void read_version(const json& j, const std::string& path) {
  if (!j.is_object()) throw IoError(path + ": /: expected an object");
  if (!j.count("version")) return;
  if (!j["version"].is_number_integer() || j["version"].get<int64_t>() != 1)
    throw IoError(path + ": /version: expected 1");
}

}  // namespace

TadModel build_model(const ModelConfig& mc, const SynthDataset& data) {
  if (data.videos.empty()) throw ConfigError("build_model: dataset has no videos");
  const Shape& s = data.videos[0].shape();
  if (s.size() != 4)
    throw ConfigError("build_model: expected [T,H,W,C] videos, got " +
                      shape_str(s));
  BackboneConfig bc;
  bc.depth = mc.depth;
  bc.d_model = mc.d_model;
  bc.t_patch = mc.t_patch;
  bc.h_patch = mc.h_patch;
  bc.w_patch = mc.w_patch;
  bc.frames = s[0];
  bc.height = s[1];
  bc.width = s[2];
  bc.channels_in = s[3];
  EstfConfig ac;
  ac.d_model = mc.d_model;
  ac.rank = mc.rank;
  ac.d_state = mc.d_state;
  ac.pool_h = mc.pool_h;
  ac.pool_w = mc.pool_w;
  DetectorConfig dc;
  dc.n_classes = int64_t(data.annos.labels.size());
  dc.n_levels = mc.n_levels;
  dc.token_sec = double(mc.t_patch) / kSynthFps;
  return TadModel::init(bc, ac, dc, mc.seed);
}

RunConfig load_run_config(const std::string& path) {
  json j = parse_file(path);
  read_version(j, path);
  ObjReader r{j, path + ": "};
  r.known({"version", "model", "train"});
  RunConfig cfg;
  if (j.count("model")) read_model(j["model"], path + ": /model", cfg.model);
  if (j.count("train")) read_train(j["train"], path + ": /train", cfg.train);
  return cfg;
}

AblationConfig load_ablation_config(const std::string& path) {
  json j = parse_file(path);
  read_version(j, path);
  ObjReader r{j, path + ": "};
  r.known({"version", "data_spec", "model", "train", "bootstrap"});
  AblationConfig cfg;
  if (j.count("data_spec")) {
    if (!j["data_spec"].is_string())
      throw IoError(path + ": /data_spec: expected a string");
    std::filesystem::path p(j["data_spec"].get<std::string>());
    if (p.is_relative()) p = std::filesystem::path(path).parent_path() / p;
    cfg.data = load_synth_spec(p.string());
  }
  if (j.count("model")) {
    ModelConfig mc;
    mc.d_model = cfg.d_model;
    mc.depth = cfg.depth;
    mc.rank = cfg.rank;
    mc.d_state = cfg.d_state;
    mc.t_patch = cfg.t_patch;
    mc.h_patch = cfg.h_patch;
    mc.w_patch = cfg.w_patch;
    mc.pool_h = cfg.pool_h;
    mc.pool_w = cfg.pool_w;
    mc.n_levels = cfg.n_levels;
    mc.seed = cfg.model_seed;
    read_model(j["model"], path + ": /model", mc);
    cfg.d_model = mc.d_model;
    cfg.depth = mc.depth;
    cfg.rank = mc.rank;
    cfg.d_state = mc.d_state;
    cfg.t_patch = mc.t_patch;
    cfg.h_patch = mc.h_patch;
    cfg.w_patch = mc.w_patch;
    cfg.pool_h = mc.pool_h;
    cfg.pool_w = mc.pool_w;
    cfg.n_levels = mc.n_levels;
    cfg.model_seed = mc.seed;
  }
  if (j.count("train")) read_train(j["train"], path + ": /train", cfg.train);
  if (j.count("bootstrap")) {
    const json& b = j["bootstrap"];
    std::string bp = path + ": /bootstrap";
    if (!b.is_object()) throw IoError(bp + ": expected an object");
    ObjReader rb{b, bp};
    rb.known({"samples", "seed"});
    rb.geti("samples", cfg.bootstrap_samples, 1);
    rb.getu("seed", cfg.bootstrap_seed);
  }
  return cfg;
}

}  // namespace tad
