// Anchor-free detection head: center-sampled target assignment, focal/IoU/
// centerness losses, and box decoding with greedy NMS.
#pragma once

#include <limits>

#include "alignps/backbone_afa.hpp"
#include "alignps/synth_data.hpp"

namespace alignps {

// Identity value for background locations (distinct from kUnlabeled persons).
constexpr int kNoIdentity = -2;

struct FcosConfig {
  int tower_convs = 4;
  double center_radius = 1.5;  // in units of the level stride
  double score_thresh = 0.05;
  double nms_iou = 0.5;
  int max_det = 100;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  int gn_groups = 8;
  // Upper bound of max(l,t,r,b) routed to each level; size must equal the
  // number of feature levels, last entry typically infinity.
  std::vector<double> level_ranges{std::numeric_limits<double>::infinity()};
};

inline std::vector<double> default_level_ranges(int n_levels) {
  const double inf = std::numeric_limits<double>::infinity();
  if (n_levels == 1) return {inf};
  if (n_levels == 2) return {128.0, inf};
  return {128.0, 256.0, inf};
}

struct LocationTargets {
  struct Level {
    int h = 0, w = 0, stride = 0;
    std::vector<uint8_t> is_fg;       // h*w
    std::vector<double> ltrb;         // 4*(h*w), defined where is_fg
    std::vector<double> centerness;   // h*w, defined where is_fg
    std::vector<int> identity;        // kNoIdentity for background
    std::vector<int> person_index;    // index into scene.persons, -1 for background
  };
  std::vector<Level> levels;

  int num_fg() const;
};

// Center-sampling assignment with smallest-area tie-break and max(ltrb) level
// routing. level_dims holds (h,w) of each head level.
LocationTargets assign_targets(const SceneSample& scene,
                               const std::vector<std::pair<int, int>>& level_dims,
                               const std::vector<int>& strides,
                               const std::vector<double>& level_ranges, double center_radius);

struct HeadMaps {
  Var cls_logit;  // (1,H,W)
  Var ctr_logit;  // (1,H,W)
  Var ltrb;       // (4,H,W), decoded distances in pixels
  int stride = 8;
};

class FcosHead {
 public:
  static FcosHead create(ParamStore& ps, const std::string& prefix, int d, int n_levels,
                         const FcosConfig& cfg, std::mt19937_64& rng);
  std::vector<HeadMaps> forward(const AfaOutput& feats) const;
  const FcosConfig& config() const { return cfg_; }

 private:
  FcosConfig cfg_;
  std::vector<ConvBlock> cls_tower_, reg_tower_;
  Conv2dLayer cls_pred_, ctr_pred_, reg_pred_;
  std::vector<Var> scales_;  // learnable per-level regression scale
};

struct DetectionLosses {
  Var cls, reg, ctr;
};

// cls: sigmoid focal loss over all locations / max(1, #fg).
// reg: centerness-weighted -log(IoU) over foreground / sum of weights.
// ctr: binary cross-entropy on foreground / #fg.
DetectionLosses detection_loss(const std::vector<HeadMaps>& preds, const LocationTargets& targets,
                               const FcosConfig& cfg);

struct Detection {
  BoxF box;
  double score = 0.0;
  int level = 0;
  int location_index = 0;  // y*W + x within its level
};

struct DetectionSet {
  std::vector<Detection> dets;
  Tensord embeddings;  // N x D, filled by the search pipeline

  std::vector<BoxF> boxes() const;
  std::vector<double> scores() const;
};

// score = sqrt(sigmoid(cls) * sigmoid(ctr)); greedy NMS with deterministic
// (score desc, location index asc) ordering.
DetectionSet decode_detections(const std::vector<HeadMaps>& preds, int image_w, int image_h,
                               const FcosConfig& cfg);

}  // namespace alignps
