#include "alignps/model.hpp"

#include <algorithm>
#include <cmath>

namespace alignps {

namespace {

int route_level(const BoxF& box, const std::vector<double>& ranges) {
  const double m = 0.5 * std::max(box.width(), box.height());
  for (size_t i = 0; i < ranges.size(); ++i)
    if (m < ranges[i]) return static_cast<int>(i);
  return static_cast<int>(ranges.size()) - 1;
}

}  // namespace

PersonSearchModel::PersonSearchModel(const RunConfig& cfg, int num_ids) : cfg_(cfg) {
  std::mt19937_64 rng(cfg.seed ^ 0x5EED0001ULL);
  backbone_ = Backbone::create(params_, "backbone", cfg.backbone, rng);
  const auto& ch = cfg.backbone.channels;
  afa_ = Afa::create(params_, "afa", cfg.afa, {ch[1], ch[2], ch[3]}, rng);
  FcosConfig fcfg = cfg.fcos;
  if (fcfg.level_ranges.size() != static_cast<size_t>(num_levels()))
    fcfg.level_ranges = default_level_ranges(num_levels());
  cfg_.fcos = fcfg;
  head_ = FcosHead::create(params_, "head", cfg.afa.d, num_levels(), fcfg, rng);

  const bool roi_branch =
      cfg.preset == ModelPreset::kRoiAlignPs || cfg.preset == ModelPreset::kRoiAlignStar;
  if (roi_branch) {
    if (cfg_.train_with_rpn)
      rpn_ = Rpn::create(params_, "rpn", ch[2], cfg.rpn, rng);
    roi_head_ = RoiEmbedHead::create(params_, "roi", ch[2], cfg.afa.d, cfg.roi_pool, rng,
                                     cfg.roi_stage_convs);
    if (cfg_.mutual.mi)
      mine_ = MineEstimator::create(params_, "mine", cfg.afa.d, cfg.afa.d, rng,
                                    cfg_.mutual.mine_hidden);
  }

  ReidMemoryConfig mcfg;
  mcfg.num_ids = num_ids;
  mcfg.d = cfg.afa.d;
  mcfg.queue_size = cfg.queue_size;
  mcfg.temperature = cfg.oim_temperature;
  mcfg.momentum = cfg.oim_momentum;
  std::mt19937_64 mem_rng(cfg.seed ^ 0x5EED0002ULL);
  memory_align_ = ReidMemory(mcfg, mem_rng);
  // The ROI branch keeps its own independent memory so branch losses stay
  // decoupled.
  memory_roi_ = ReidMemory(mcfg, mem_rng);
}

std::vector<double> PersonSearchModel::level_ranges() const { return cfg_.fcos.level_ranges; }

PersonSearchModel::Features PersonSearchModel::forward_features(const Tensord& image_chw,
                                                                int orig_w, int orig_h) {
  Features f;
  f.image_w = orig_w;
  f.image_h = orig_h;
  Var img = constant(pad_to_multiple32(image_chw));
  TrunkFeatures trunk = backbone_.forward_trunk(img);
  f.c3 = trunk.c3;
  f.c4 = trunk.c4;
  f.afa = afa_.forward({trunk.c3, trunk.c4, backbone_.forward_c5(trunk.c4)});
  f.head = head_.forward(f.afa);
  return f;
}

LevelLoc PersonSearchModel::box_center_location(const BoxF& box, const Features& f) const {
  LevelLoc loc;
  loc.level = route_level(box, cfg_.fcos.level_ranges);
  const auto& map = f.afa.maps[static_cast<size_t>(loc.level)]->value;
  const int stride = f.afa.strides[static_cast<size_t>(loc.level)];
  loc.x = std::clamp(static_cast<int>(box.cx() / stride), 0, map.dim(2) - 1);
  loc.y = std::clamp(static_cast<int>(box.cy() / stride), 0, map.dim(1) - 1);
  return loc;
}

Var PersonSearchModel::align_embeddings_at(const Features& f,
                                           const std::vector<LevelLoc>& locs) const {
  return reid_embed_at(f.afa, locs);
}

SceneLosses PersonSearchModel::train_forward(const SceneSample& scene) {
  SceneLosses out;
  Features f = forward_features(image_to_tensor(scene.image), scene.image.width,
                                scene.image.height);

  std::vector<std::pair<int, int>> level_dims;
  for (const auto& m : f.afa.maps)
    level_dims.emplace_back(m->value.dim(1), m->value.dim(2));
  LocationTargets targets = assign_targets(scene, level_dims, f.afa.strides,
                                           cfg_.fcos.level_ranges, cfg_.fcos.center_radius);
  DetectionLosses det = detection_loss(f.head, targets, cfg_.fcos);

  std::vector<Var> terms{det.cls, det.reg, det.ctr};
  std::vector<double> weights{1.0, 1.0, 1.0};
  out.components["det_cls"] = det.cls->value[0];
  out.components["det_reg"] = det.reg->value[0];
  out.components["det_ctr"] = det.ctr->value[0];

  // Re-id embeddings from center-sampled foreground locations, at most S per
  // person per level.
  std::vector<LevelLoc> reid_locs;
  std::vector<int> reid_ids;
  for (size_t li = 0; li < targets.levels.size(); ++li) {
    const auto& lvl = targets.levels[li];
    std::map<int, std::vector<std::pair<double, int>>> by_person;
    for (int i = 0; i < lvl.h * lvl.w; ++i)
      if (lvl.is_fg[static_cast<size_t>(i)])
        by_person[lvl.person_index[static_cast<size_t>(i)]].emplace_back(
            -lvl.centerness[static_cast<size_t>(i)], i);
    for (auto& [person, locs] : by_person) {
      std::sort(locs.begin(), locs.end());
      const int take = std::min<int>(cfg_.triplet.samples_per_id, static_cast<int>(locs.size()));
      for (int k = 0; k < take; ++k) {
        reid_locs.push_back({static_cast<int>(li), locs[static_cast<size_t>(k)].second / lvl.w,
                             locs[static_cast<size_t>(k)].second % lvl.w});
        reid_ids.push_back(scene.persons[static_cast<size_t>(person)].identity);
      }
    }
  }
  if (!reid_locs.empty() && cfg_.reid_weight > 0.0) {
    Var emb = align_embeddings_at(f, reid_locs);
    Var reid = cfg_.reid_loss == ReidLossKind::kToim
                   ? toim_loss(emb, reid_ids, memory_align_, cfg_.triplet, cfg_.focal_oim,
                               cfg_.focal_oim_gamma)
                   : oim_loss(emb, reid_ids, memory_align_, cfg_.focal_oim,
                              cfg_.focal_oim_gamma);
    terms.push_back(reid);
    weights.push_back(cfg_.reid_weight * reid_scale_);
    out.components["reid"] = reid->value[0];
    out.align_embeddings = emb->value;
    out.align_identities = reid_ids;
  }

  if (roi_head_) {
    // Pool ground-truth boxes plus a few matched candidate boxes.
    std::vector<BoxF> roi_boxes;
    std::vector<int> roi_ids;
    std::vector<BoxF> gt_boxes;
    for (const auto& p : scene.persons) {
      roi_boxes.push_back(p.box);
      roi_ids.push_back(p.identity);
      gt_boxes.push_back(p.box);
    }

    std::vector<BoxF> candidates;
    if (rpn_) {
      RpnOut rout = rpn_->forward_train(f.c4, gt_boxes, scene.image.width, scene.image.height);
      terms.push_back(rout.objectness_loss);
      weights.push_back(1.0);
      terms.push_back(rout.delta_loss);
      weights.push_back(1.0);
      out.components["rpn_obj"] = rout.objectness_loss->value[0];
      out.components["rpn_delta"] = rout.delta_loss->value[0];
      candidates = rout.proposals;
    } else {
      // Joint training without RPN pools the anchor-free detections instead.
      NoGradGuard ng;
      DetectionSet dets =
          decode_detections(f.head, scene.image.width, scene.image.height, cfg_.fcos);
      candidates = dets.boxes();
    }
    int taken = 0;
    for (const auto& c : candidates) {
      if (taken >= cfg_.roi_train_rois) break;
      double best = 0.5;
      int arg = -1;
      for (size_t g = 0; g < gt_boxes.size(); ++g)
        if (iou(c, gt_boxes[g]) >= best) {
          best = iou(c, gt_boxes[g]);
          arg = static_cast<int>(g);
        }
      if (arg < 0) continue;
      roi_boxes.push_back(c);
      roi_ids.push_back(scene.persons[static_cast<size_t>(arg)].identity);
      ++taken;
    }

    if (!roi_boxes.empty()) {
      Var emb_roi = roi_head_->embed(f.c4, roi_boxes, cfg_.rpn.stride);
      Var roi_reid = oim_loss(emb_roi, roi_ids, memory_roi_, cfg_.focal_oim,
                              cfg_.focal_oim_gamma);
      terms.push_back(roi_reid);
      weights.push_back(cfg_.roi_reid_weight * reid_scale_);
      out.components["roi_reid"] = roi_reid->value[0];
      out.roi_embeddings = emb_roi->value;
      out.roi_identities = roi_ids;

      if (cfg_.mutual.any()) {
        // Collect row-aligned per-person features over the labeled GT boxes;
        // the mutual losses themselves act on the whole mini-batch.
        std::vector<LevelLoc> centers;
        std::vector<int> rows;
        for (size_t p = 0; p < scene.persons.size(); ++p) {
          if (scene.persons[p].identity < 0) continue;
          centers.push_back(box_center_location(scene.persons[p].box, f));
          rows.push_back(static_cast<int>(p));
        }
        if (!centers.empty()) {
          out.mutual_x_align = align_embeddings_at(f, centers);
          out.mutual_x_roi = slice_rows(emb_roi, rows);
        }
      }
    }
  }

  out.total = weighted_sum(terms, weights);
  out.components["total"] = out.total->value[0];
  return out;
}

void PersonSearchModel::append_mutual_losses(const std::vector<SceneLosses>& batch,
                                             std::vector<Var>* terms,
                                             std::vector<double>* weights,
                                             std::map<std::string, double>* components) {
  if (!cfg_.mutual.any()) return;
  std::vector<Var> xa_blocks, xr_blocks;
  for (const auto& s : batch)
    if (s.mutual_x_align && s.mutual_x_roi) {
      xa_blocks.push_back(s.mutual_x_align);
      xr_blocks.push_back(s.mutual_x_roi);
    }
  if (xa_blocks.empty()) return;
  Var x_a = vconcat_rows(xa_blocks);
  Var x_r = vconcat_rows(xr_blocks);

  if (cfg_.mutual.mi && mine_ && x_a->value.dim(0) >= 2) {
    Var lmi = mine_loss(x_a, x_r, *mine_);
    terms->push_back(lmi);
    weights->push_back(cfg_.mutual.w_mi);
    (*components)["mi"] = lmi->value[0];
  }
  if (cfg_.mutual.kl) {
    Var lkl = kl_consensus_loss(oim_labeled_posteriors(x_a, memory_align_),
                                oim_labeled_posteriors(x_r, memory_roi_),
                                cfg_.mutual.kl_teacher);
    terms->push_back(lkl);
    weights->push_back(cfg_.mutual.w_kl);
    (*components)["kl"] = lkl->value[0];
  }
  if (cfg_.mutual.dv) {
    Var ldv = diversity_loss(x_a, x_r);
    terms->push_back(ldv);
    weights->push_back(cfg_.mutual.w_dv);
    (*components)["dv"] = ldv->value[0];
  }
}

void PersonSearchModel::apply_memory_updates(const std::vector<SceneLosses>& batch) {
  for (const auto& s : batch) {
    if (s.align_embeddings.numel() > 0)
      memory_align_.update(s.align_embeddings, s.align_identities);
    if (s.roi_embeddings.numel() > 0) memory_roi_.update(s.roi_embeddings, s.roi_identities);
  }
}

SceneDetections PersonSearchModel::infer_scene(const SceneSample& scene, EmbeddingSource src) {
  NoGradGuard ng;
  Features f = forward_features(image_to_tensor(scene.image), scene.image.width,
                                scene.image.height);
  DetectionSet dets =
      decode_detections(f.head, scene.image.width, scene.image.height, cfg_.fcos);

  SceneDetections out;
  out.scene_id = scene.scene_id;
  if (dets.dets.empty()) {
    out.embeddings = Tensord({0, cfg_.afa.d});
    return out;
  }
  for (const auto& d : dets.dets) {
    out.boxes.push_back(d.box);
    out.scores.push_back(d.score);
  }

  EmbeddingSource effective = src;
  if (effective == EmbeddingSource::kDefault) {
    if (cfg_.preset == ModelPreset::kRoiAlignPs) effective = EmbeddingSource::kFused;
    else if (cfg_.preset == ModelPreset::kRoiAlignStar) effective = EmbeddingSource::kRoiOnly;
    else effective = EmbeddingSource::kAlignOnly;
  }
  if (effective != EmbeddingSource::kAlignOnly && !roi_head_)
    throw std::invalid_argument("infer_scene: model has no ROI branch for this source");

  Var emb;
  if (effective == EmbeddingSource::kAlignOnly || effective == EmbeddingSource::kFused) {
    std::vector<LevelLoc> locs;
    for (const auto& d : dets.dets) {
      const auto& m = f.afa.maps[static_cast<size_t>(d.level)]->value;
      locs.push_back(
          {d.level, d.location_index / m.dim(2), d.location_index % m.dim(2)});
    }
    emb = align_embeddings_at(f, locs);
  }
  if (effective == EmbeddingSource::kRoiOnly || effective == EmbeddingSource::kFused) {
    Var emb_roi = roi_head_->embed(f.c4, out.boxes, cfg_.rpn.stride);
    emb = effective == EmbeddingSource::kFused ? fuse_embeddings(emb, emb_roi) : emb_roi;
  }
  out.embeddings = emb->value;
  return out;
}

Eigen::VectorXd PersonSearchModel::query_embedding(const SceneSample& scene, const BoxF& box,
                                                   EmbeddingSource src) {
  NoGradGuard ng;
  Features f = forward_features(image_to_tensor(scene.image), scene.image.width,
                                scene.image.height);
  EmbeddingSource effective = src;
  if (effective == EmbeddingSource::kDefault) {
    if (cfg_.preset == ModelPreset::kRoiAlignPs) effective = EmbeddingSource::kFused;
    else if (cfg_.preset == ModelPreset::kRoiAlignStar) effective = EmbeddingSource::kRoiOnly;
    else effective = EmbeddingSource::kAlignOnly;
  }
  Var emb;
  if (effective == EmbeddingSource::kAlignOnly || effective == EmbeddingSource::kFused)
    emb = align_embeddings_at(f, {box_center_location(box, f)});
  if (effective == EmbeddingSource::kRoiOnly || effective == EmbeddingSource::kFused) {
    Var emb_roi = roi_head_->embed(f.c4, {box}, cfg_.rpn.stride);
    emb = effective == EmbeddingSource::kFused ? fuse_embeddings(emb, emb_roi) : emb_roi;
  }
  Eigen::VectorXd v(emb->value.dim(1));
  for (int c = 0; c < emb->value.dim(1); ++c) v[c] = emb->value(0, c);
  return v;
}

SceneDetections PersonSearchModel::infer_scene_forced_rpn(const SceneSample& scene) {
  NoGradGuard ng;
  if (!rpn_ || !roi_head_)
    throw std::invalid_argument("infer_scene_forced_rpn: model has no RPN branch");
  Features f = forward_features(image_to_tensor(scene.image), scene.image.width,
                                scene.image.height);
  // Dense-proposal pipeline on top of the shared trunk.
  std::vector<BoxF> proposals = rpn_->propose(f.c4, scene.image.width, scene.image.height);
  if (!proposals.empty()) (void)roi_head_->embed(f.c4, proposals, cfg_.rpn.stride);

  DetectionSet dets =
      decode_detections(f.head, scene.image.width, scene.image.height, cfg_.fcos);
  SceneDetections out;
  out.scene_id = scene.scene_id;
  if (dets.dets.empty()) {
    out.embeddings = Tensord({0, cfg_.afa.d});
    return out;
  }
  for (const auto& d : dets.dets) {
    out.boxes.push_back(d.box);
    out.scores.push_back(d.score);
  }
  Var emb_roi = roi_head_->embed(f.c4, out.boxes, cfg_.rpn.stride);
  std::vector<LevelLoc> locs;
  for (const auto& d : dets.dets) {
    const auto& m = f.afa.maps[static_cast<size_t>(d.level)]->value;
    locs.push_back({d.level, d.location_index / m.dim(2), d.location_index % m.dim(2)});
  }
  out.embeddings = fuse_embeddings(align_embeddings_at(f, locs), emb_roi)->value;
  return out;
}

double PersonSearchModel::deform_probe_max_diff() {
  NoGradGuard ng;
  std::mt19937_64 rng(0xBEEF);
  double worst = 0.0;
  auto probe_layer = [&](const DeformConvLayer& layer) {
    const int cin = layer.w->value.dim(1);
    Var x = constant(Tensord::randn({cin, 6, 6}, rng));
    Var zero_off = constant(Tensord({18, 6, 6}));
    Var a = deform_conv2d(x, layer.w, layer.b, zero_off);
    Var b = conv2d(x, layer.w, layer.b, 1, 1);
    worst = std::max(worst, (a->value.array() - b->value.array()).abs().maxCoeff());
  };
  for (const auto& l : afa_.deform_layers()) probe_layer(*l);
  return worst;
}

}  // namespace alignps
