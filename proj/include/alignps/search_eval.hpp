// Query/gallery person-search evaluation: greedy detection matching, per-query
// average precision and top-1, detection recall/AP, and gallery-size sweeps.
#pragma once

#include <functional>
#include <map>
#include <optional>

#include "alignps/fcos_head.hpp"
#include "alignps/synth_data.hpp"

namespace alignps {

// Per-scene detections with embeddings, as consumed by the evaluator.
struct SceneDetections {
  std::string scene_id;
  std::vector<BoxF> boxes;
  std::vector<double> scores;
  Tensord embeddings;  // N x D (unit rows)
};

// Greedy one-to-one matching at IoU >= iou_thresh in score order; result[i]
// is the matched GT index or -1.
std::vector<int> match_detections(const std::vector<BoxF>& boxes,
                                  const std::vector<double>& scores,
                                  const std::vector<PersonAnn>& gts, double iou_thresh = 0.5);

struct SearchMetrics {
  double map = 0.0;
  double top1 = 0.0;
  int n_queries = 0;
  int n_excluded = 0;  // queries whose identity had no GT instance in the gallery
};

struct QueryEmbeddingFn {
  // scene_id, ground-truth query box -> unit embedding
  std::function<Eigen::VectorXd(const std::string&, const BoxF&)> fn;
};

// Per query: rank all gallery detections by cosine similarity (deterministic
// (scene_id, detection index) tie-break); a detection is a true match iff it
// was greedily matched to a GT box of the query identity. AP uses
// sum_k Prec(k) * dRecall(k) with the number of gallery GT instances of the
// identity as the recall denominator.
SearchMetrics search_map(const SearchSplit& split,
                         const std::map<std::string, SceneDetections>& detections,
                         const QueryEmbeddingFn& query_embed, double iou_thresh = 0.5);

struct DetectionMetrics {
  double recall = 0.0;
  double ap = 0.0;
  int n_gt = 0;
  int n_det = 0;
};

// Single-class recall@IoU0.5 and AP with the all-points interpolated
// precision envelope.
DetectionMetrics detection_metrics(const std::map<std::string, SceneDetections>& detections,
                                   const std::vector<SceneSample>& scenes,
                                   double iou_thresh = 0.5);

// Nested galleries: the true scenes first, then deterministic distractors.
// Throws when size exceeds the available scenes.
std::vector<Query> galleries_of_size(const SearchSplit& split, int size);

struct SweepPoint {
  int size = 0;
  double map = 0.0;
  double top1 = 0.0;
};

std::vector<SweepPoint> gallery_size_sweep(const SearchSplit& split,
                                           const std::map<std::string, SceneDetections>& dets,
                                           const QueryEmbeddingFn& query_embed,
                                           const std::vector<int>& sizes);

}  // namespace alignps
