#include "alignps/fcos_head.hpp"

#include <cmath>

namespace alignps {

namespace {

double sigmoid_clamped(double z) {
  const double p = 1.0 / (1.0 + std::exp(-z));
  return std::min(std::max(p, 1e-12), 1.0 - 1e-12);
}

// Sum of per-location sigmoid focal terms over one (1,H,W) logit map.
Var focal_loss_sum(const Var& logits, std::shared_ptr<std::vector<uint8_t>> fg, double alpha,
                   double gamma) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits->value.numel(); ++i) {
    const double p = sigmoid_clamped(logits->value[i]);
    if ((*fg)[static_cast<size_t>(i)])
      total += -alpha * std::pow(1.0 - p, gamma) * std::log(p);
    else
      total += -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
  }
  return make_op(Tensord::scalar(total), {logits}, [logits, fg, alpha, gamma](Node& n) {
    if (!logits->requires_grad) return;
    auto& g = logits->ensure_grad();
    const double go = n.grad[0];
    for (Eigen::Index i = 0; i < g.numel(); ++i) {
      const double p = sigmoid_clamped(logits->value[i]);
      double d;
      if ((*fg)[static_cast<size_t>(i)]) {
        d = alpha * (gamma * p * std::pow(1.0 - p, gamma) * std::log(p) -
                     std::pow(1.0 - p, gamma + 1.0));
      } else {
        d = -(1.0 - alpha) * (gamma * std::pow(p, gamma) * (1.0 - p) * std::log(1.0 - p) -
                              std::pow(p, gamma + 1.0));
      }
      g[i] += go * d;
    }
  });
}

// Centerness-weighted sum of -log(IoU) over foreground locations of one level.
Var iou_loss_sum(const Var& ltrb, const LocationTargets::Level& tgt) {
  const int hw = tgt.h * tgt.w;
  auto fg_idx = std::make_shared<std::vector<int>>();
  for (int i = 0; i < hw; ++i)
    if (tgt.is_fg[static_cast<size_t>(i)]) fg_idx->push_back(i);
  auto gt = std::make_shared<std::vector<double>>(tgt.ltrb);
  auto weights = std::make_shared<std::vector<double>>(tgt.centerness);

  auto compute = [hw](const Tensord& pred, const std::vector<int>& idx,
                      const std::vector<double>& g, const std::vector<double>& w, Tensord* gout,
                      double go) {
    double total = 0.0;
    for (int i : idx) {
      const double l = pred[i], t = pred[hw + i], r = pred[2 * hw + i], b = pred[3 * hw + i];
      const double lg = g[static_cast<size_t>(4 * i)], tg = g[static_cast<size_t>(4 * i + 1)],
                   rg = g[static_cast<size_t>(4 * i + 2)], bg = g[static_cast<size_t>(4 * i + 3)];
      const double iw = std::min(l, lg) + std::min(r, rg);
      const double ih = std::min(t, tg) + std::min(b, bg);
      const double inter = std::max(iw, 0.0) * std::max(ih, 0.0);
      const double ap = (l + r) * (t + b);
      const double ag = (lg + rg) * (tg + bg);
      const double uni = ap + ag - inter;
      const double iou = std::max(inter / std::max(uni, 1e-12), 1e-12);
      const double wi = w[static_cast<size_t>(i)];
      total += -wi * std::log(iou);
      if (gout) {
        // d(-log IoU)/dx = dU/dx / U - dI/dx / I
        auto axis = [&](double p, double pg, double other_len, double d_ap) {
          const double d_i = (p < pg ? other_len : 0.0);
          const double d_u = d_ap - d_i;
          return d_u / std::max(uni, 1e-12) - d_i / std::max(inter, 1e-12);
        };
        (*gout)[i] += go * wi * axis(l, lg, ih, t + b);
        (*gout)[2 * hw + i] += go * wi * axis(r, rg, ih, t + b);
        (*gout)[hw + i] += go * wi * axis(t, tg, iw, l + r);
        (*gout)[3 * hw + i] += go * wi * axis(b, bg, iw, l + r);
      }
    }
    return total;
  };

  const double total = compute(ltrb->value, *fg_idx, *gt, *weights, nullptr, 0.0);
  return make_op(Tensord::scalar(total), {ltrb},
                 [ltrb, fg_idx, gt, weights, compute](Node& n) {
    if (!ltrb->requires_grad) return;
    compute(ltrb->value, *fg_idx, *gt, *weights, &ltrb->ensure_grad(), n.grad[0]);
  });
}

// Sum of binary cross-entropy with logits on foreground locations.
Var bce_logits_sum(const Var& logits, const LocationTargets::Level& tgt) {
  auto fg_idx = std::make_shared<std::vector<int>>();
  for (int i = 0; i < tgt.h * tgt.w; ++i)
    if (tgt.is_fg[static_cast<size_t>(i)]) fg_idx->push_back(i);
  auto targets = std::make_shared<std::vector<double>>(tgt.centerness);

  double total = 0.0;
  for (int i : *fg_idx) {
    const double z = logits->value[i];
    const double y = (*targets)[static_cast<size_t>(i)];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return make_op(Tensord::scalar(total), {logits}, [logits, fg_idx, targets](Node& n) {
    if (!logits->requires_grad) return;
    auto& g = logits->ensure_grad();
    for (int i : *fg_idx) {
      const double p = 1.0 / (1.0 + std::exp(-logits->value[i]));
      g[i] += n.grad[0] * (p - (*targets)[static_cast<size_t>(i)]);
    }
  });
}

}  // namespace

int LocationTargets::num_fg() const {
  int n = 0;
  for (const auto& lvl : levels)
    for (uint8_t f : lvl.is_fg) n += f;
  return n;
}

LocationTargets assign_targets(const SceneSample& scene,
                               const std::vector<std::pair<int, int>>& level_dims,
                               const std::vector<int>& strides,
                               const std::vector<double>& level_ranges, double center_radius) {
  if (level_dims.size() != strides.size() || strides.size() != level_ranges.size())
    throw std::invalid_argument("assign_targets: level configuration mismatch");

  // Route each box to exactly one level by its central regression extent, so
  // the level assignment partitions the boxes.
  std::vector<int> box_level(scene.persons.size(), 0);
  for (size_t pi = 0; pi < scene.persons.size(); ++pi) {
    const double m = 0.5 * std::max(scene.persons[pi].box.width(),
                                    scene.persons[pi].box.height());
    int lvl = static_cast<int>(level_ranges.size()) - 1;
    for (size_t li = 0; li < level_ranges.size(); ++li)
      if (m < level_ranges[li]) {
        lvl = static_cast<int>(li);
        break;
      }
    box_level[pi] = lvl;
  }

  LocationTargets out;
  for (size_t li = 0; li < level_dims.size(); ++li) {
    LocationTargets::Level lvl;
    lvl.h = level_dims[li].first;
    lvl.w = level_dims[li].second;
    lvl.stride = strides[li];
    const int hw = lvl.h * lvl.w;
    lvl.is_fg.assign(static_cast<size_t>(hw), 0);
    lvl.ltrb.assign(static_cast<size_t>(4 * hw), 0.0);
    lvl.centerness.assign(static_cast<size_t>(hw), 0.0);
    lvl.identity.assign(static_cast<size_t>(hw), kNoIdentity);
    lvl.person_index.assign(static_cast<size_t>(hw), -1);

    const double s = lvl.stride;

    for (int y = 0; y < lvl.h; ++y)
      for (int x = 0; x < lvl.w; ++x) {
        const double px = (x + 0.5) * s;
        const double py = (y + 0.5) * s;
        int best = -1;
        double best_area = std::numeric_limits<double>::infinity();
        for (size_t pi = 0; pi < scene.persons.size(); ++pi) {
          if (box_level[pi] != static_cast<int>(li)) continue;
          const BoxF& b = scene.persons[pi].box;
          if (!b.contains(px, py)) continue;
          // Center sampling: the location must also fall in the sub-box
          // around the object center, clipped by the box itself.
          const double r = center_radius * s;
          if (px < std::max(b.x1, b.cx() - r) || px > std::min(b.x2, b.cx() + r) ||
              py < std::max(b.y1, b.cy() - r) || py > std::min(b.y2, b.cy() + r))
            continue;
          if (b.area() < best_area) {
            best_area = b.area();
            best = static_cast<int>(pi);
          }
        }
        if (best < 0) continue;
        const BoxF& b = scene.persons[static_cast<size_t>(best)].box;
        const int i = y * lvl.w + x;
        const double l = px - b.x1, t = py - b.y1, rr = b.x2 - px, bb = b.y2 - py;
        lvl.is_fg[static_cast<size_t>(i)] = 1;
        lvl.ltrb[static_cast<size_t>(4 * i)] = l;
        lvl.ltrb[static_cast<size_t>(4 * i + 1)] = t;
        lvl.ltrb[static_cast<size_t>(4 * i + 2)] = rr;
        lvl.ltrb[static_cast<size_t>(4 * i + 3)] = bb;
        lvl.centerness[static_cast<size_t>(i)] =
            std::sqrt((std::min(l, rr) / std::max(l, rr)) * (std::min(t, bb) / std::max(t, bb)));
        lvl.identity[static_cast<size_t>(i)] = scene.persons[static_cast<size_t>(best)].identity;
        lvl.person_index[static_cast<size_t>(i)] = best;
      }
    out.levels.push_back(std::move(lvl));
  }
  return out;
}

FcosHead FcosHead::create(ParamStore& ps, const std::string& prefix, int d, int n_levels,
                          const FcosConfig& cfg, std::mt19937_64& rng) {
  FcosHead h;
  h.cfg_ = cfg;
  for (int i = 0; i < cfg.tower_convs; ++i) {
    h.cls_tower_.push_back(
        ConvBlock::create(ps, prefix + ".cls_tower." + std::to_string(i), d, d, 3, 1,
                          cfg.gn_groups, rng));
    h.reg_tower_.push_back(
        ConvBlock::create(ps, prefix + ".reg_tower." + std::to_string(i), d, d, 3, 1,
                          cfg.gn_groups, rng));
  }
  // Classification bias starts at the focal-loss prior so early training is
  // not swamped by background terms.
  const double prior = 0.01;
  h.cls_pred_ = Conv2dLayer::create(ps, prefix + ".cls_pred", d, 1, 3, 1, 1, rng, false,
                                    -std::log((1.0 - prior) / prior));
  h.ctr_pred_ = Conv2dLayer::create(ps, prefix + ".ctr_pred", d, 1, 3, 1, 1, rng);
  h.reg_pred_ = Conv2dLayer::create(ps, prefix + ".reg_pred", d, 4, 3, 1, 1, rng);
  for (int l = 0; l < n_levels; ++l)
    h.scales_.push_back(ps.add(prefix + ".scale" + std::to_string(l), Tensord::scalar(1.0)));
  return h;
}

std::vector<HeadMaps> FcosHead::forward(const AfaOutput& feats) const {
  if (feats.maps.size() != scales_.size())
    throw std::invalid_argument("fcos_head: level count mismatch with AFA output");
  std::vector<HeadMaps> out;
  for (size_t li = 0; li < feats.maps.size(); ++li) {
    Var cls = feats.maps[li];
    Var reg = feats.maps[li];
    for (const auto& blk : cls_tower_) cls = blk.forward(cls);
    for (const auto& blk : reg_tower_) reg = blk.forward(reg);
    HeadMaps m;
    m.stride = feats.strides[li];
    m.cls_logit = cls_pred_.forward(cls);
    // Centerness shares the regression branch.
    m.ctr_logit = ctr_pred_.forward(reg);
    // Distances are stride * exp(scale * raw): positive and roughly one
    // stride at initialization.
    m.ltrb = scale(exp_clamped(mul_scalar_var(reg_pred_.forward(reg), scales_[li])),
                   static_cast<double>(m.stride));
    out.push_back(std::move(m));
  }
  return out;
}

DetectionLosses detection_loss(const std::vector<HeadMaps>& preds,
                               const LocationTargets& targets, const FcosConfig& cfg) {
  if (preds.size() != targets.levels.size())
    throw std::invalid_argument("detection_loss: level count mismatch");
  const int n_fg = targets.num_fg();

  std::vector<Var> cls_terms, reg_terms, ctr_terms;
  double weight_sum = 0.0;
  for (size_t li = 0; li < preds.size(); ++li) {
    const auto& tgt = targets.levels[li];
    auto fg = std::make_shared<std::vector<uint8_t>>(tgt.is_fg);
    cls_terms.push_back(
        focal_loss_sum(preds[li].cls_logit, fg, cfg.focal_alpha, cfg.focal_gamma));
    if (n_fg > 0) {
      reg_terms.push_back(iou_loss_sum(preds[li].ltrb, tgt));
      ctr_terms.push_back(bce_logits_sum(preds[li].ctr_logit, tgt));
      for (int i = 0; i < tgt.h * tgt.w; ++i)
        if (tgt.is_fg[static_cast<size_t>(i)]) weight_sum += tgt.centerness[static_cast<size_t>(i)];
    }
  }

  DetectionLosses out;
  out.cls = scale(weighted_sum(cls_terms, std::vector<double>(cls_terms.size(), 1.0)),
                  1.0 / std::max(1, n_fg));
  if (n_fg > 0) {
    out.reg = scale(weighted_sum(reg_terms, std::vector<double>(reg_terms.size(), 1.0)),
                    1.0 / std::max(weight_sum, 1e-12));
    out.ctr = scale(weighted_sum(ctr_terms, std::vector<double>(ctr_terms.size(), 1.0)),
                    1.0 / n_fg);
  } else {
    out.reg = constant(Tensord::scalar(0.0));
    out.ctr = constant(Tensord::scalar(0.0));
  }
  return out;
}

std::vector<BoxF> DetectionSet::boxes() const {
  std::vector<BoxF> out;
  out.reserve(dets.size());
  for (const auto& d : dets) out.push_back(d.box);
  return out;
}

std::vector<double> DetectionSet::scores() const {
  std::vector<double> out;
  out.reserve(dets.size());
  for (const auto& d : dets) out.push_back(d.score);
  return out;
}

DetectionSet decode_detections(const std::vector<HeadMaps>& preds, int image_w, int image_h,
                               const FcosConfig& cfg) {
  std::vector<Detection> cands;
  for (size_t li = 0; li < preds.size(); ++li) {
    const auto& m = preds[li];
    const int h = m.cls_logit->value.dim(1), w = m.cls_logit->value.dim(2);
    const int hw = h * w;
    const double s = m.stride;
    for (int i = 0; i < hw; ++i) {
      const double score = std::sqrt(sigmoid_clamped(m.cls_logit->value[i]) *
                                     sigmoid_clamped(m.ctr_logit->value[i]));
      if (!std::isfinite(score) || score < cfg.score_thresh) continue;
      const double px = (i % w + 0.5) * s, py = (i / w + 0.5) * s;
      Detection d;
      d.level = static_cast<int>(li);
      d.location_index = i;
      d.score = score;
      d.box = BoxF{px - m.ltrb->value[i], py - m.ltrb->value[hw + i],
                   px + m.ltrb->value[2 * hw + i], py + m.ltrb->value[3 * hw + i]}
                  .clipped(image_w, image_h);
      if (d.box.width() <= 0 || d.box.height() <= 0) continue;
      cands.push_back(d);
    }
  }
  // Candidates are already in (level, location_index) order, so NMS
  // tie-breaking by input index matches (score desc, location_index asc).
  std::vector<BoxF> boxes;
  std::vector<double> scores;
  for (const auto& c : cands) {
    boxes.push_back(c.box);
    scores.push_back(c.score);
  }
  DetectionSet out;
  for (int idx : nms(boxes, scores, cfg.nms_iou, cfg.max_det))
    out.dets.push_back(cands[static_cast<size_t>(idx)]);
  return out;
}

}  // namespace alignps
