// Full person-search models assembled from the backbone, AFA, detection head,
// memory losses, ROI branch and mutual-learning losses, with anchor-free
// inference.
#pragma once

#include <map>
#include <optional>

#include "alignps/config.hpp"
#include "alignps/search_eval.hpp"

namespace alignps {

struct SceneLosses {
  Var total;
  std::map<std::string, double> components;

  // Row-aligned per-person branch features for the batch-level mutual losses.
  Var mutual_x_align, mutual_x_roi;  // (B_scene, D) or null

  // Deferred memory-update payloads (applied once per optimizer step).
  Tensord align_embeddings;  // (B,D) detached values
  std::vector<int> align_identities;
  Tensord roi_embeddings;
  std::vector<int> roi_identities;
};

class PersonSearchModel {
 public:
  PersonSearchModel(const RunConfig& cfg, int num_ids);

  const RunConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int num_levels() const { return afa_level_count(cfg_.afa.levels); }
  bool has_roi_branch() const { return roi_head_.has_value(); }

  // Trainer-controlled multiplier on the re-id loss weights (curriculum ramp).
  void set_reid_scale(double s) { reid_scale_ = s; }
  SceneLosses train_forward(const SceneSample& scene);
  void apply_memory_updates(const std::vector<SceneLosses>& batch);

  // Mutual losses over the persons of a whole mini-batch (the batch is the
  // sampling unit of the MI bound and of the mean cosine); appends weighted
  // terms and records their values.
  void append_mutual_losses(const std::vector<SceneLosses>& batch, std::vector<Var>* terms,
                            std::vector<double>* weights,
                            std::map<std::string, double>* components);

  SceneDetections infer_scene(const SceneSample& scene,
                              EmbeddingSource src = EmbeddingSource::kDefault);
  Eigen::VectorXd query_embedding(const SceneSample& scene, const BoxF& box,
                                  EmbeddingSource src = EmbeddingSource::kDefault);
  // Timing path mimicking a dense two-stage pipeline: proposals + pooling on
  // top of the regular inference. Never used by the search pipeline.
  SceneDetections infer_scene_forced_rpn(const SceneSample& scene);

  long anchors_built() const { return rpn_ ? rpn_->anchors_built() : 0; }

  ReidMemory& memory_align() { return memory_align_; }
  ReidMemory& memory_roi() { return memory_roi_; }

  // Max |deformable(zero offsets) - standard conv| over the AFA deform layers
  // on a fixed probe input; exact zero-offset equivalence holds by
  // construction and this guards the numeric path in debug mode.
  double deform_probe_max_diff();

  std::vector<double> level_ranges() const;

 private:
  struct Features {
    Var c3, c4;
    AfaOutput afa;
    std::vector<HeadMaps> head;
    int image_w = 0, image_h = 0;  // unpadded
  };
  Features forward_features(const Tensord& image_chw, int orig_w, int orig_h);
  LevelLoc box_center_location(const BoxF& box, const Features& f) const;
  Var align_embeddings_at(const Features& f, const std::vector<LevelLoc>& locs) const;

  RunConfig cfg_;
  ParamStore params_;
  Backbone backbone_;
  Afa afa_;
  FcosHead head_;
  std::optional<Rpn> rpn_;
  std::optional<RoiEmbedHead> roi_head_;
  std::optional<MineEstimator> mine_;
  ReidMemory memory_align_, memory_roi_;
  double reid_scale_ = 1.0;
};

}  // namespace alignps
