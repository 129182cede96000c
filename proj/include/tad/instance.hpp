#pragma once

#include <cstdint>

namespace tad {

// A detected action segment, times in seconds.
struct ActionInstance {
  double t_start = 0, t_end = 0;
  int label = 0;
  double score = 0;
};

// An annotated segment; no score.
struct GroundTruthInstance {
  double t_start = 0, t_end = 0;
  int label = 0;
};

}  // namespace tad
