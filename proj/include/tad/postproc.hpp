#pragma once

#include <vector>

#include "tad/instance.hpp"

namespace tad {

// |a "intersect" b| / |a "union" b| for time segments; 0 when the union has
// zero length. Symmetric, in [0,1].
double tiou(double a_start, double a_end, double b_start, double b_end);

enum class NmsMethod { gaussian, linear, hard };

struct NmsConfig {
  NmsMethod method = NmsMethod::gaussian;
  double sigma = 0.5;          // gaussian decay width
  double iou_threshold = 0.5;  // overlap that triggers linear/hard suppression
  double score_floor = 0.001;  // survivors decaying below this are dropped
  bool per_class = true;       // labels never suppress each other when true
};

// Greedy suppression: repeatedly keep the highest-scoring remaining instance
// and decay the scores of instances overlapping it (same label only, unless
// per_class=false). gaussian multiplies by exp(-tiou^2/sigma); linear
// multiplies by (1-tiou) past the threshold; hard removes past the
// threshold. Segments and labels pass through unmodified; scores never
// increase. Output sorted by final score descending, ties keeping selection
// order.
std::vector<ActionInstance> soft_nms(std::vector<ActionInstance> instances,
                                     const NmsConfig& cfg = {});

}  // namespace tad
