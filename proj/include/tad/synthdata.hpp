#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tad/metrics.hpp"
#include "tad/tensor.hpp"

namespace tad {

// frame<->second conversion stays exact in binary floating point
inline constexpr double kSynthFps = 4.0;

enum class Difficulty { easy, hard };

struct SynthSpec {
  uint64_t seed = 1;
  int64_t n_videos = 8;
  int64_t frames = 64;
  int64_t height = 16;
  int64_t width = 16;
  int64_t channels = 3;
  int64_t n_classes = 4;
  int64_t min_actions = 1;  // per video
  int64_t max_actions = 3;
  int64_t min_len = 8;  // frames
  int64_t max_len = 24;
  Difficulty difficulty = Difficulty::easy;
  double onset_sharpness = 2.0;   // larger = steeper rise at t_start
  double offset_sharpness = 2.0;  // larger = steeper fall at t_end

  void validate() const;
};

struct SynthDataset {
  std::vector<Tensor> videos;  // [T,H,W,C] each
  AnnotationSet annos;
};

// Amplitude profile of an action of `len` frames: min(1, onset*u, offset*v)
// with u the scaled distance from the start and v from the end. Reversing
// the array equals swapping the two sharpness values exactly.
std::vector<double> ramp_profile(int64_t len, double onset, double offset);

// Seeded noise background plus one moving class-specific blob per action;
// deterministic per (seed, video index).
SynthDataset generate(const SynthSpec& spec);

struct AsymmetrySuite {
  SynthSpec sym_spec, asym_spec;
  SynthDataset symmetric, asymmetric;
};

// Matched pair differing only in ramp sharpness: same seeds, bit-identical
// background and placements.
AsymmetrySuite asymmetry_suite(const SynthSpec& base);

uint64_t dataset_checksum(const SynthDataset& ds);

// dir layout: annotations.json + one tensor file per video (<id>.tnsr)
void save_dataset(const SynthDataset& ds, const std::string& dir);
SynthDataset load_dataset(const std::string& dir);

SynthSpec load_synth_spec(const std::string& path);
void save_synth_spec(const SynthSpec& spec, const std::string& path);

// bundled low-resolution training setting
SynthSpec easy_preset();
// full-resolution long-clip setting; shape smoke tests only, never rendered
SynthSpec full_scale_preset();

}  // namespace tad
