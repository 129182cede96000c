#include "tad/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tad/common.hpp"

namespace tad {

double tiou(double a_start, double a_end, double b_start, double b_end) {
  double inter = std::min(a_end, b_end) - std::max(a_start, b_start);
  if (inter <= 0) return 0.0;
  double uni = (a_end - a_start) + (b_end - b_start) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<ActionInstance> soft_nms(std::vector<ActionInstance> instances,
                                     const NmsConfig& cfg) {
  if (cfg.method == NmsMethod::gaussian && !(cfg.sigma > 0))
    throw ConfigError("soft_nms: sigma must be > 0");
  if (cfg.score_floor < 0) throw ConfigError("soft_nms: score_floor must be >= 0");
  if (cfg.iou_threshold < 0 || cfg.iou_threshold > 1)
    throw ConfigError("soft_nms: iou_threshold must be in [0,1]");
  for (size_t i = 0; i < instances.size(); ++i) {
    const auto& a = instances[i];
    if (!std::isfinite(a.score) || !std::isfinite(a.t_start) || !std::isfinite(a.t_end))
      throw NumericError("soft_nms: non-finite instance at index " + std::to_string(i));
    if (!(a.t_end > a.t_start))
      throw ConfigError("soft_nms: degenerate segment at index " + std::to_string(i));
    if (a.score < 0 || a.score > 1)
      throw ConfigError("soft_nms: score outside [0,1] at index " + std::to_string(i));
  }

  std::vector<char> alive(instances.size(), 1);
  for (size_t i = 0; i < instances.size(); ++i)
    if (instances[i].score < cfg.score_floor) alive[i] = 0;

  std::vector<ActionInstance> kept;
  for (;;) {
    int best = -1;
    for (size_t i = 0; i < instances.size(); ++i)
      if (alive[i] && (best < 0 || instances[i].score > instances[static_cast<size_t>(best)].score))
        best = int(i);
    if (best < 0) break;
    const ActionInstance m = instances[static_cast<size_t>(best)];
    alive[static_cast<size_t>(best)] = 0;
    kept.push_back(m);
    for (size_t i = 0; i < instances.size(); ++i) {
      if (!alive[i]) continue;
      ActionInstance& x = instances[i];
      if (cfg.per_class && x.label != m.label) continue;
      double o = tiou(m.t_start, m.t_end, x.t_start, x.t_end);
      switch (cfg.method) {
        case NmsMethod::gaussian:
          x.score *= std::exp(-(o * o) / cfg.sigma);
          break;
        case NmsMethod::linear:
          if (o > cfg.iou_threshold) x.score *= 1.0 - o;
          break;
        case NmsMethod::hard:
          if (o > cfg.iou_threshold) alive[i] = 0;
          break;
      }
      if (x.score < cfg.score_floor) alive[i] = 0;
    }
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const ActionInstance& a, const ActionInstance& b) {
                     return a.score > b.score;
                   });
  return kept;
}

}  // namespace tad
