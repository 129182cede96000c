#include "tad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "json.hpp"
#include "tad/common.hpp"
#include "tad/postproc.hpp"

namespace tad {

using nlohmann::json;

const VideoAnnotations* AnnotationSet::find(const std::string& id) const {
  for (const auto& v : videos)
    if (v.id == id) return &v;
  return nullptr;
}

void AnnotationSet::validate() const {
  std::set<std::string> seen;
  for (size_t i = 0; i < videos.size(); ++i) {
    const auto& v = videos[i];
    if (!seen.insert(v.id).second)
      throw ConfigError("annotations: duplicate video id '" + v.id + "'");
    if (!(v.duration > 0))
      throw ConfigError("annotations: video '" + v.id + "' needs duration > 0");
    if (!(v.fps > 0))
      throw ConfigError("annotations: video '" + v.id + "' needs fps > 0");
    for (size_t a = 0; a < v.annotations.size(); ++a) {
      const auto& g = v.annotations[a];
      if (!(g.t_end > g.t_start) || g.t_start < 0 || g.t_end > v.duration)
        throw ConfigError("annotations: video '" + v.id + "' segment " +
                          std::to_string(a) + " must satisfy 0 <= start < end <= duration");
      if (g.label < 0 || g.label >= int(labels.size()))
        throw ConfigError("annotations: video '" + v.id + "' segment " +
                          std::to_string(a) + " has label outside the vocabulary");
    }
  }
}

namespace {

struct RankedPred {
  double t_start, t_end, score;
  int64_t video, order;
};

// AP for one class at one threshold; gts given per video as (start,end)
double ap_core(std::vector<RankedPred> preds,
               const std::vector<std::vector<std::pair<double, double>>>& gts,
               int64_t n_gt, double thr) {
  if (n_gt == 0) return 0.0;
  if (preds.empty()) return 0.0;
  std::sort(preds.begin(), preds.end(), [](const RankedPred& a, const RankedPred& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.t_start != b.t_start) return a.t_start < b.t_start;
    return a.order < b.order;
  });
  std::vector<std::vector<char>> matched(gts.size());
  for (size_t v = 0; v < gts.size(); ++v) matched[v].assign(gts[v].size(), 0);

  size_t n = preds.size();
  std::vector<double> prec(n), rec(n);
  int64_t tp = 0;
  for (size_t k = 0; k < n; ++k) {
    const RankedPred& p = preds[k];
    const auto& vg = gts[static_cast<size_t>(p.video)];
    int best = -1;
    double best_o = 0;
    for (size_t g = 0; g < vg.size(); ++g) {
      if (matched[static_cast<size_t>(p.video)][g]) continue;
      double o = tiou(p.t_start, p.t_end, vg[g].first, vg[g].second);
      if (o > best_o) {
        best_o = o;
        best = int(g);
      }
    }
    if (best >= 0 && best_o >= thr) {
      matched[static_cast<size_t>(p.video)][static_cast<size_t>(best)] = 1;
      ++tp;
    }
    prec[k] = double(tp) / double(k + 1);
    rec[k] = double(tp) / double(n_gt);
  }
  // area under the precision envelope across all recall points
  std::vector<double> env(prec);
  for (size_t k = n - 1; k-- > 0;) env[k] = std::max(env[k], env[k + 1]);
  double ap = 0, prev_r = 0;
  for (size_t k = 0; k < n; ++k) {
    if (rec[k] > prev_r) ap += (rec[k] - prev_r) * env[k];
    prev_r = rec[k];
  }
  return ap;
}

void check_threshold(double thr) {
  if (!(thr > 0) || thr > 1)
    throw ConfigError("evaluate: tIoU threshold must be in (0,1], got " +
                      std::to_string(thr));
}

std::string fmt_cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%7.4f", v);
  return buf;
}

}  // namespace

std::optional<double> average_precision(const std::vector<ActionInstance>& preds,
                                        const std::vector<GroundTruthInstance>& gts,
                                        double threshold) {
  check_threshold(threshold);
  if (preds.empty() && gts.empty()) return std::nullopt;
  std::vector<std::vector<std::pair<double, double>>> g(1);
  for (const auto& gt : gts) {
    if (!(gt.t_end > gt.t_start))
      throw ConfigError("average_precision: degenerate ground-truth segment");
    g[0].emplace_back(gt.t_start, gt.t_end);
  }
  std::vector<RankedPred> p;
  for (size_t i = 0; i < preds.size(); ++i) {
    const auto& a = preds[i];
    if (!std::isfinite(a.score) || !(a.t_end > a.t_start))
      throw ConfigError("average_precision: malformed prediction at index " +
                        std::to_string(i));
    p.push_back({a.t_start, a.t_end, a.score, 0, int64_t(i)});
  }
  return ap_core(std::move(p), g, int64_t(gts.size()), threshold);
}

MetricReport evaluate(const PredictionMap& preds, const AnnotationSet& annos,
                      const std::vector<double>& thresholds) {
  annos.validate();
  if (thresholds.empty()) throw ConfigError("evaluate: need at least one threshold");
  for (double t : thresholds) check_threshold(t);
  std::map<std::string, int64_t> vid_index;
  for (size_t i = 0; i < annos.videos.size(); ++i)
    vid_index[annos.videos[i].id] = int64_t(i);
  int64_t C = int64_t(annos.labels.size());
  for (const auto& [vid, list] : preds) {
    if (!vid_index.count(vid))
      throw ConfigError("evaluate: predictions reference unknown video '" + vid + "'");
    for (size_t i = 0; i < list.size(); ++i) {
      const auto& a = list[i];
      if (a.label < 0 || a.label >= C)
        throw ConfigError("evaluate: prediction " + std::to_string(i) +
                          " for video '" + vid + "' has label " +
                          std::to_string(a.label) + " outside the vocabulary");
      if (!(a.t_end > a.t_start) || !std::isfinite(a.score))
        throw ConfigError("evaluate: prediction " + std::to_string(i) +
                          " for video '" + vid + "' is malformed");
    }
  }

  MetricReport rep;
  rep.thresholds = thresholds;
  rep.labels = annos.labels;
  rep.ap.assign(static_cast<size_t>(C), std::vector<double>(thresholds.size(), 0.0));
  rep.counted.assign(static_cast<size_t>(C), 0);

  for (int64_t c = 0; c < C; ++c) {
    std::vector<std::vector<std::pair<double, double>>> gts(annos.videos.size());
    int64_t n_gt = 0;
    for (size_t v = 0; v < annos.videos.size(); ++v)
      for (const auto& g : annos.videos[v].annotations)
        if (g.label == c) {
          gts[v].emplace_back(g.t_start, g.t_end);
          ++n_gt;
        }
    std::vector<RankedPred> cls_preds;
    int64_t order = 0;
    for (const auto& [vid, list] : preds)
      for (const auto& a : list)
        if (a.label == c)
          cls_preds.push_back({a.t_start, a.t_end, a.score, vid_index[vid], order++});
    if (n_gt == 0 && cls_preds.empty()) continue;  // nothing to score
    rep.counted[static_cast<size_t>(c)] = 1;
    for (size_t ti = 0; ti < thresholds.size(); ++ti)
      rep.ap[static_cast<size_t>(c)][ti] =
          ap_core(cls_preds, gts, n_gt, thresholds[ti]);
  }

  int64_t counted = 0;
  for (char f : rep.counted) counted += f;
  rep.map_per_threshold.assign(thresholds.size(), 0.0);
  for (size_t ti = 0; ti < thresholds.size(); ++ti) {
    double acc = 0;
    for (int64_t c = 0; c < C; ++c)
      if (rep.counted[static_cast<size_t>(c)]) acc += rep.ap[static_cast<size_t>(c)][ti];
    rep.map_per_threshold[ti] = counted ? acc / double(counted) : 0.0;
  }
  double acc = 0;
  for (double m : rep.map_per_threshold) acc += m;
  rep.average_map = acc / double(thresholds.size());
  return rep;
}

std::string MetricReport::table() const {
  size_t w = 5;  // "class"
  for (const auto& l : labels) w = std::max(w, l.size());
  w += 2;
  auto pad = [&](const std::string& s) {
    std::string r = s;
    r.resize(w, ' ');
    return r;
  };
  std::string out = pad("class");
  char buf[32];
  for (double t : thresholds) {
    std::snprintf(buf, sizeof buf, "%7.2f", t);
    out += buf;
  }
  out += "    Avg\n";
  for (size_t c = 0; c < labels.size(); ++c) {
    out += pad(labels[c]);
    if (counted[c]) {
      double acc = 0;
      for (size_t ti = 0; ti < thresholds.size(); ++ti) {
        out += fmt_cell(ap[c][ti]);
        acc += ap[c][ti];
      }
      out += fmt_cell(acc / double(thresholds.size()));
    } else {
      for (size_t ti = 0; ti <= thresholds.size(); ++ti) out += "      -";
    }
    out += "\n";
  }
  out += pad("mAP");
  for (double m : map_per_threshold) out += fmt_cell(m);
  out += fmt_cell(average_map);
  out += "\n";
  return out;
}

namespace {

const json& req(const json& j, const char* key, const std::string& where,
                const std::string& path) {
  auto it = j.find(key);
  if (it == j.end())
    throw IoError(path + ": " + where + "/" + key + ": missing");
  return *it;
}

double num_at(const json& j, const char* key, const std::string& where,
              const std::string& path) {
  const json& v = req(j, key, where, path);
  if (!v.is_number())
    throw IoError(path + ": " + where + "/" + key + ": expected a number");
  return v.get<double>();
}

std::string str_at(const json& j, const char* key, const std::string& where,
                   const std::string& path) {
  const json& v = req(j, key, where, path);
  if (!v.is_string())
    throw IoError(path + ": " + where + "/" + key + ": expected a string");
  return v.get<std::string>();
}

int label_index(const std::vector<std::string>& labels, const std::string& name,
                const std::string& where, const std::string& path) {
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == name) return int(i);
  throw IoError(path + ": " + where + ": unknown label '" + name + "'");
}

json parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(path + ": cannot open");
  try {
    json j;
    f >> j;
    return j;
  } catch (const json::parse_error& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace

AnnotationSet load_annotations(const std::string& path) {
  json j = parse_file(path);
  if (!j.is_object()) throw IoError(path + ": /: expected an object");
  if (num_at(j, "version", "", path) != 1)
    throw IoError(path + ": /version: unsupported (want 1)");
  AnnotationSet out;
  const json& labels = req(j, "labels", "", path);
  if (!labels.is_array()) throw IoError(path + ": /labels: expected an array");
  for (size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i].is_string())
      throw IoError(path + ": /labels/" + std::to_string(i) + ": expected a string");
    out.labels.push_back(labels[i].get<std::string>());
  }
  const json& videos = req(j, "videos", "", path);
  if (!videos.is_array()) throw IoError(path + ": /videos: expected an array");
  for (size_t i = 0; i < videos.size(); ++i) {
    std::string where = "/videos/" + std::to_string(i);
    const json& jv = videos[i];
    if (!jv.is_object()) throw IoError(path + ": " + where + ": expected an object");
    VideoAnnotations v;
    v.id = str_at(jv, "id", where, path);
    v.duration = num_at(jv, "duration", where, path);
    v.fps = num_at(jv, "fps", where, path);
    const json& anns = req(jv, "annotations", where, path);
    if (!anns.is_array())
      throw IoError(path + ": " + where + "/annotations: expected an array");
    for (size_t a = 0; a < anns.size(); ++a) {
      std::string aw = where + "/annotations/" + std::to_string(a);
      GroundTruthInstance g;
      g.t_start = num_at(anns[a], "start", aw, path);
      g.t_end = num_at(anns[a], "end", aw, path);
      g.label = label_index(out.labels, str_at(anns[a], "label", aw, path),
                            aw + "/label", path);
      if (!(g.t_end > g.t_start))
        throw IoError(path + ": " + aw + "/end: must be > start");
      if (g.t_start < 0 || g.t_end > v.duration)
        throw IoError(path + ": " + aw + ": segment outside [0, duration]");
      v.annotations.push_back(g);
    }
    out.videos.push_back(std::move(v));
  }
  out.validate();
  return out;
}

void save_annotations(const AnnotationSet& annos, const std::string& path) {
  annos.validate();
  json j;
  j["version"] = 1;
  j["labels"] = annos.labels;
  j["videos"] = json::array();
  for (const auto& v : annos.videos) {
    json jv;
    jv["id"] = v.id;
    jv["duration"] = v.duration;
    jv["fps"] = v.fps;
    jv["annotations"] = json::array();
    for (const auto& g : v.annotations) {
      json ja;
      ja["start"] = g.t_start;
      ja["end"] = g.t_end;
      ja["label"] = annos.labels[static_cast<size_t>(g.label)];
      jv["annotations"].push_back(ja);
    }
    j["videos"].push_back(jv);
  }
  std::ofstream f(path);
  if (!f) throw IoError(path + ": cannot open for writing");
  f << j.dump(2) << "\n";
  if (!f) throw IoError(path + ": write failed");
}

PredictionMap load_predictions(const std::string& path, const AnnotationSet& annos) {
  json j = parse_file(path);
  const json& res = req(j, "results", "", path);
  if (!res.is_object()) throw IoError(path + ": /results: expected an object");
  PredictionMap out;
  for (auto it = res.begin(); it != res.end(); ++it) {
    std::string where = "/results/" + it.key();
    if (!annos.find(it.key()))
      throw IoError(path + ": " + where + ": unknown video '" + it.key() + "'");
    if (!it.value().is_array())
      throw IoError(path + ": " + where + ": expected an array");
    std::vector<ActionInstance> list;
    for (size_t i = 0; i < it.value().size(); ++i) {
      std::string aw = where + "/" + std::to_string(i);
      const json& jp = it.value()[i];
      ActionInstance a;
      a.t_start = num_at(jp, "start", aw, path);
      a.t_end = num_at(jp, "end", aw, path);
      a.label = label_index(annos.labels, str_at(jp, "label", aw, path),
                            aw + "/label", path);
      a.score = num_at(jp, "score", aw, path);
      if (!(a.t_end > a.t_start)) throw IoError(path + ": " + aw + "/end: must be > start");
      if (!(a.score >= 0 && a.score <= 1))
        throw IoError(path + ": " + aw + "/score: must be in [0,1]");
      list.push_back(a);
    }
    out[it.key()] = std::move(list);
  }
  return out;
}

void save_predictions(const PredictionMap& preds, const AnnotationSet& annos,
                      const std::string& path) {
  json res = json::object();
  for (const auto& [vid, list] : preds) {
    json arr = json::array();
    for (const auto& a : list) {
      if (a.label < 0 || a.label >= int(annos.labels.size()))
        throw ConfigError("save_predictions: label outside the vocabulary for video '" +
                          vid + "'");
      json jp;
      jp["start"] = a.t_start;
      jp["end"] = a.t_end;
      jp["label"] = annos.labels[static_cast<size_t>(a.label)];
      jp["score"] = a.score;
      arr.push_back(jp);
    }
    res[vid] = arr;
  }
  json j;
  j["results"] = res;
  std::ofstream f(path);
  if (!f) throw IoError(path + ": cannot open for writing");
  f << j.dump(2) << "\n";
  if (!f) throw IoError(path + ": write failed");
}

}  // namespace tad
