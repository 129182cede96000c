#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tad/detector.hpp"
#include "tad/postproc.hpp"
#include "tad/synthdata.hpp"

namespace tad {

struct TrainConfig {
  double lr = 1e-4;
  int64_t batch_size = 8;
  int64_t epochs = 20;
  int64_t warmup_steps = 20;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t shuffle_seed = 1;
  NmsConfig nms;  // applied before every evaluation

  void validate() const;
};

// linear warm-up to cfg.lr, then cosine decay to zero at total_steps
double lr_at(const TrainConfig& cfg, int64_t step, int64_t total_steps);

// Adaptive optimizer with decoupled weight decay over raw tensor buffers.
// Parameters that received no gradient this step are left untouched.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, const TrainConfig& cfg);
  void zero_grad();
  void step(double lr);

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  double b1_, b2_, eps_, wd_;
  int64_t t_ = 0;
};

struct EpochStats {
  int64_t epoch = 0;
  double loss_cls = 0;
  double loss_reg = 0;
  double map50 = 0;    // mAP at tIoU 0.5
  double avg_map = 0;  // mean over the default thresholds
};

struct TrainResult {
  std::vector<EpochStats> log;
  MetricReport report;   // evaluation after the last completed epoch
  bool aborted = false;  // non-finite loss; parameters restored to last good epoch
  int64_t steps_done = 0;
};

// Full loop: precomputes patch tokens once (the embedding is frozen),
// shuffles per epoch from (shuffle_seed + epoch), averages the detection
// loss over each batch, and evaluates after every epoch. A non-finite loss
// aborts the run and rolls the parameters back to the end of the last
// finished epoch.
TrainResult train(TadModel& model, const SynthDataset& data, const TrainConfig& cfg);

// decode + soft-NMS over every video, keyed by video id
PredictionMap predict(const TadModel& model, const SynthDataset& data,
                      const NmsConfig& nms = {});

// Directory of one tensor file per parameter (frozen backbone included)
// plus a manifest listing them; loading demands an exact name match.
void save_checkpoint(TadModel& model, const std::string& dir);
void load_checkpoint(TadModel& model, const std::string& dir);

void write_train_log(const std::vector<EpochStats>& log, const std::string& path);

}  // namespace tad
