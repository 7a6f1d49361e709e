// Explicit region alignment branch: a minimal training-time RPN over the
// shared stride-16 features and a region-pooled embedding head. At inference
// the branch pools the anchor-free detections; no anchors are constructed.
#pragma once

#include "alignps/fcos_head.hpp"
#include "alignps/roi_align.hpp"

namespace alignps {

struct RpnConfig {
  double anchor_base = 32.0;  // anchor area = base^2, one scale
  std::vector<double> ratios{1.0, 2.0, 3.0};  // height/width
  double pos_iou = 0.7;
  double neg_iou = 0.3;
  double nms_iou = 0.7;
  int pre_nms_topk = 256;
  int post_nms_topk = 64;
  int stride = 16;
};

struct AnchorMatch {
  std::vector<int> label;    // 1 positive, 0 negative, -1 ignored
  std::vector<int> matched;  // GT index for positives
};

std::vector<BoxF> make_anchors(int fh, int fw, const RpnConfig& cfg);

// IoU >= pos_iou is positive, < neg_iou negative, in between ignored; the
// best anchor of every GT box is forced positive.
AnchorMatch match_anchors(const std::vector<BoxF>& anchors, const std::vector<BoxF>& gt,
                          const RpnConfig& cfg);

struct RpnOut {
  Var objectness_loss;
  Var delta_loss;
  std::vector<BoxF> proposals;  // decoded, clipped, NMS-filtered, top-k
};

class Rpn {
 public:
  static Rpn create(ParamStore& ps, const std::string& prefix, int in_channels,
                    const RpnConfig& cfg, std::mt19937_64& rng);

  // Training-time forward over the shared stride-16 map.
  RpnOut forward_train(const Var& c4, const std::vector<BoxF>& gt_boxes, int image_w,
                       int image_h);
  // Inference-style proposal generation; used only by the forced-RPN timing
  // path, never by the anchor-free inference.
  std::vector<BoxF> propose(const Var& c4, int image_w, int image_h);

  long anchors_built() const { return anchors_built_; }
  const RpnConfig& config() const { return cfg_; }

 private:
  struct Maps {
    Var obj, delta;
  };
  Maps heads(const Var& c4) const;
  std::vector<BoxF> decode_proposals(const Maps& maps, const std::vector<BoxF>& anchors,
                                     int image_w, int image_h) const;

  RpnConfig cfg_;
  ConvBlock conv_;
  Conv2dLayer obj_pred_, delta_pred_;
  long anchors_built_ = 0;
};

class RoiEmbedHead {
 public:
  static RoiEmbedHead create(ParamStore& ps, const std::string& prefix, int in_channels, int d,
                             int pool, std::mt19937_64& rng, int stage_convs = 2);

  // Pool each box from the shared map, run the branch-private conv stage,
  // average and project to a unit-norm D-vector per box. Boxes with area
  // under one pixel are skipped with a warning; their rows are zero and
  // flagged. Output is (N,D).
  Var embed(const Var& c4, const std::vector<BoxF>& boxes, int stride = 16,
            std::vector<uint8_t>* degenerate = nullptr) const;

  int dim() const { return d_; }
  const LinearLayer& proj() const { return proj_; }

 private:
  int d_ = 0, pool_ = 7;
  std::vector<ConvBlock> stage_;
  LinearLayer proj_;
};

// concat(normalize(e_align), normalize(e_roi)) renormalized; the fused cosine
// of two detections is the mean of the per-branch cosines.
Var fuse_embeddings(const Var& e_align, const Var& e_roi);

}  // namespace alignps
