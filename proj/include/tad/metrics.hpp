#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tad/instance.hpp"

namespace tad {

struct VideoAnnotations {
  std::string id;
  double duration = 0;  // seconds
  double fps = 0;
  std::vector<GroundTruthInstance> annotations;
};

struct AnnotationSet {
  std::vector<std::string> labels;  // class id -> name
  std::vector<VideoAnnotations> videos;

  const VideoAnnotations* find(const std::string& id) const;
  void validate() const;  // unique ids, labels in range, segments in [0,duration]
};

// predictions keyed by video id
using PredictionMap = std::map<std::string, std::vector<ActionInstance>>;

// Greedy AP at one tIoU threshold for a single class on one video's
// instances. Predictions are ranked by score descending (ties: earlier
// t_start, then input order); each one matches the unmatched ground truth
// with the highest overlap if that overlap reaches the threshold. The
// precision envelope is integrated over all recall points. nullopt when
// there is nothing to score (no gts and no preds); 0 when gts are absent
// but predictions exist.
std::optional<double> average_precision(const std::vector<ActionInstance>& preds,
                                        const std::vector<GroundTruthInstance>& gts,
                                        double threshold);

struct MetricReport {
  std::vector<double> thresholds;
  std::vector<std::string> labels;
  std::vector<std::vector<double>> ap;  // [class][threshold]
  std::vector<char> counted;            // class participates in the means
  std::vector<double> map_per_threshold;
  double average_map = 0;

  std::string table() const;  // fixed-width text rendering
};

// AP per class per threshold over the whole annotation set; matching never
// crosses video boundaries while ranking is global per class.
MetricReport evaluate(const PredictionMap& preds, const AnnotationSet& annos,
                      const std::vector<double>& thresholds = {0.3, 0.4, 0.5,
                                                               0.6, 0.7});

// JSON IO. Malformed files throw IoError naming the file and the JSON path
// of the offending element.
AnnotationSet load_annotations(const std::string& path);
void save_annotations(const AnnotationSet& annos, const std::string& path);
PredictionMap load_predictions(const std::string& path, const AnnotationSet& annos);
void save_predictions(const PredictionMap& preds, const AnnotationSet& annos,
                      const std::string& path);

}  // namespace tad
