#pragma once

#include <cstdint>
#include <string>

#include "tad/bench.hpp"
#include "tad/detector.hpp"
#include "tad/synthdata.hpp"
#include "tad/trainer.hpp"

namespace tad {

// model sizes as exposed in JSON configs; input dims come from the dataset
struct ModelConfig {
  int64_t d_model = 32;
  int64_t depth = 2;
  int64_t rank = 8;
  int64_t d_state = 4;
  int64_t t_patch = 2, h_patch = 8, w_patch = 8;
  int64_t pool_h = 2, pool_w = 2;
  int64_t n_levels = 4;
  uint64_t seed = 43;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

// Reads frame count, resolution, channels and class count off the dataset and
// initializes a model with the configured sizes.
TadModel build_model(const ModelConfig& mc, const SynthDataset& data);

// JSON loaders with full-default fallback: {} is a valid config. First
// violation is reported as "path: /section/key: reason". Unknown keys are
// rejected.
RunConfig load_run_config(const std::string& path);
AblationConfig load_ablation_config(const std::string& path);

}  // namespace tad
