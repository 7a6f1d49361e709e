#include "alignps/roi_branch.hpp"

#include <cmath>
#include <iostream>

namespace alignps {

namespace {

// Mean smooth-L1 (beta = 1) over positive anchors; base_index[p] addresses
// the first delta coordinate of anchor p in the (4A,hw) map, consecutive
// coordinates are hw apart.
Var smooth_l1_mean(const Var& delta_map, std::shared_ptr<std::vector<int>> base_index,
                   std::shared_ptr<std::vector<double>> targets, int hw) {
  const int n_pos = static_cast<int>(base_index->size());
  double total = 0.0;
  for (int p = 0; p < n_pos; ++p)
    for (int c = 0; c < 4; ++c) {
      const double d = delta_map->value[(*base_index)[static_cast<size_t>(p)] + c * hw] -
                       (*targets)[static_cast<size_t>(p * 4 + c)];
      total += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
    }
  total /= std::max(n_pos, 1);
  return make_op(Tensord::scalar(total), {delta_map},
                 [delta_map, base_index, targets, hw, n_pos](Node& n) {
    if (!delta_map->requires_grad) return;
    auto& g = delta_map->ensure_grad();
    for (int p = 0; p < n_pos; ++p)
      for (int c = 0; c < 4; ++c) {
        const Eigen::Index i = (*base_index)[static_cast<size_t>(p)] + c * hw;
        const double d =
            delta_map->value[i] - (*targets)[static_cast<size_t>(p * 4 + c)];
        g[i] +=
            n.grad[0] * (std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0)) / std::max(n_pos, 1);
      }
  });
}

Var bce_logits_masked_mean(const Var& logits, std::shared_ptr<std::vector<int>> labels) {
  double total = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < logits->value.numel(); ++i) {
    const int y = (*labels)[static_cast<size_t>(i)];
    if (y < 0) continue;
    const double z = logits->value[i];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    ++count;
  }
  const double denom = std::max(count, 1);
  return make_op(Tensord::scalar(total / denom), {logits}, [logits, labels, denom](Node& n) {
    if (!logits->requires_grad) return;
    auto& g = logits->ensure_grad();
    for (Eigen::Index i = 0; i < g.numel(); ++i) {
      const int y = (*labels)[static_cast<size_t>(i)];
      if (y < 0) continue;
      const double p = 1.0 / (1.0 + std::exp(-logits->value[i]));
      g[i] += n.grad[0] * (p - y) / denom;
    }
  });
}

void box_to_delta(const BoxF& anchor, const BoxF& gt, double* out) {
  const double aw = anchor.width(), ah = anchor.height();
  out[0] = (gt.cx() - anchor.cx()) / aw;
  out[1] = (gt.cy() - anchor.cy()) / ah;
  out[2] = std::log(gt.width() / aw);
  out[3] = std::log(gt.height() / ah);
}

BoxF delta_to_box(const BoxF& anchor, const double* d) {
  const double aw = anchor.width(), ah = anchor.height();
  const double cx = anchor.cx() + d[0] * aw;
  const double cy = anchor.cy() + d[1] * ah;
  const double w = aw * std::exp(std::min(d[2], 4.0));
  const double h = ah * std::exp(std::min(d[3], 4.0));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

}  // namespace

std::vector<BoxF> make_anchors(int fh, int fw, const RpnConfig& cfg) {
  std::vector<BoxF> anchors;
  anchors.reserve(static_cast<size_t>(fh) * fw * cfg.ratios.size());
  for (int y = 0; y < fh; ++y)
    for (int x = 0; x < fw; ++x) {
      const double cx = (x + 0.5) * cfg.stride, cy = (y + 0.5) * cfg.stride;
      for (double r : cfg.ratios) {
        const double h = cfg.anchor_base * std::sqrt(r);
        const double w = cfg.anchor_base / std::sqrt(r);
        anchors.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
      }
    }
  return anchors;
}

AnchorMatch match_anchors(const std::vector<BoxF>& anchors, const std::vector<BoxF>& gt,
                          const RpnConfig& cfg) {
  AnchorMatch m;
  m.label.assign(anchors.size(), 0);
  m.matched.assign(anchors.size(), -1);
  if (gt.empty()) return m;  // everything stays negative

  std::vector<double> best_iou(anchors.size(), 0.0);
  std::vector<int> best_gt(anchors.size(), -1);
  std::vector<double> gt_best_iou(gt.size(), 0.0);
  std::vector<int> gt_best_anchor(gt.size(), -1);
  for (size_t a = 0; a < anchors.size(); ++a)
    for (size_t g = 0; g < gt.size(); ++g) {
      const double v = iou(anchors[a], gt[g]);
      if (v > best_iou[a]) {
        best_iou[a] = v;
        best_gt[a] = static_cast<int>(g);
      }
      if (v > gt_best_iou[g]) {
        gt_best_iou[g] = v;
        gt_best_anchor[g] = static_cast<int>(a);
      }
    }
  for (size_t a = 0; a < anchors.size(); ++a) {
    if (best_iou[a] >= cfg.pos_iou) {
      m.label[a] = 1;
      m.matched[a] = best_gt[a];
    } else if (best_iou[a] >= cfg.neg_iou) {
      m.label[a] = -1;  // ignored
    }
  }
  for (size_t g = 0; g < gt.size(); ++g)
    if (gt_best_anchor[g] >= 0 && gt_best_iou[g] > 0.0) {
      m.label[static_cast<size_t>(gt_best_anchor[g])] = 1;
      m.matched[static_cast<size_t>(gt_best_anchor[g])] = static_cast<int>(g);
    }
  return m;
}

Rpn Rpn::create(ParamStore& ps, const std::string& prefix, int in_channels, const RpnConfig& cfg,
                std::mt19937_64& rng) {
  Rpn r;
  r.cfg_ = cfg;
  const int a = static_cast<int>(cfg.ratios.size());
  r.conv_ = ConvBlock::create(ps, prefix + ".conv", in_channels, in_channels, 3, 1, gn_groups_for(in_channels), rng);
  r.obj_pred_ = Conv2dLayer::create(ps, prefix + ".obj", in_channels, a, 1, 1, 0, rng);
  r.delta_pred_ = Conv2dLayer::create(ps, prefix + ".delta", in_channels, 4 * a, 1, 1, 0, rng);
  return r;
}

Rpn::Maps Rpn::heads(const Var& c4) const {
  Var h = conv_.forward(c4);
  return {obj_pred_.forward(h), delta_pred_.forward(h)};
}

std::vector<BoxF> Rpn::decode_proposals(const Maps& maps, const std::vector<BoxF>& anchors,
                                        int image_w, int image_h) const {
  const int a_per_loc = static_cast<int>(cfg_.ratios.size());
  const int fh = maps.obj->value.dim(1), fw = maps.obj->value.dim(2);
  const int hw = fh * fw;
  std::vector<BoxF> boxes;
  std::vector<double> scores;
  for (int loc = 0; loc < hw; ++loc)
    for (int k = 0; k < a_per_loc; ++k) {
      const size_t ai = static_cast<size_t>(loc) * a_per_loc + static_cast<size_t>(k);
      double d[4];
      // delta map layout: channel (k*4+c), spatial loc.
      for (int c = 0; c < 4; ++c) d[c] = maps.delta->value[(k * 4 + c) * hw + loc];
      BoxF box = delta_to_box(anchors[ai], d).clipped(image_w, image_h);
      if (box.width() < 1.0 || box.height() < 1.0) continue;
      boxes.push_back(box);
      scores.push_back(1.0 / (1.0 + std::exp(-maps.obj->value[k * hw + loc])));
    }
  if (static_cast<int>(boxes.size()) > cfg_.pre_nms_topk) {
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
      if (scores[x] != scores[y]) return scores[x] > scores[y];
      return x < y;
    });
    order.resize(static_cast<size_t>(cfg_.pre_nms_topk));
    std::sort(order.begin(), order.end());
    std::vector<BoxF> b2;
    std::vector<double> s2;
    for (int i : order) {
      b2.push_back(boxes[static_cast<size_t>(i)]);
      s2.push_back(scores[static_cast<size_t>(i)]);
    }
    boxes.swap(b2);
    scores.swap(s2);
  }
  std::vector<BoxF> out;
  for (int idx : nms(boxes, scores, cfg_.nms_iou, cfg_.post_nms_topk))
    out.push_back(boxes[static_cast<size_t>(idx)]);
  return out;
}

RpnOut Rpn::forward_train(const Var& c4, const std::vector<BoxF>& gt_boxes, int image_w,
                          int image_h) {
  Maps maps = heads(c4);
  const int fh = maps.obj->value.dim(1), fw = maps.obj->value.dim(2);
  const int hw = fh * fw;
  const int a_per_loc = static_cast<int>(cfg_.ratios.size());
  std::vector<BoxF> anchors = make_anchors(fh, fw, cfg_);
  anchors_built_ += static_cast<long>(anchors.size());
  AnchorMatch match = match_anchors(anchors, gt_boxes, cfg_);

  // Objectness labels arranged in the obj map's (channel, spatial) order.
  auto labels = std::make_shared<std::vector<int>>(anchors.size(), -1);
  auto pos_rows = std::make_shared<std::vector<int>>();
  auto pos_deltas = std::make_shared<std::vector<double>>();
  for (size_t ai = 0; ai < anchors.size(); ++ai) {
    const int loc = static_cast<int>(ai) / a_per_loc;
    const int k = static_cast<int>(ai) % a_per_loc;
    const int map_index = k * hw + loc;
    (*labels)[static_cast<size_t>(map_index)] = match.label[ai];
    if (match.label[ai] == 1) {
      pos_rows->push_back(map_index);
      double d[4];
      box_to_delta(anchors[ai], gt_boxes[static_cast<size_t>(match.matched[ai])], d);
      for (int c = 0; c < 4; ++c) pos_deltas->push_back(d[c]);
    }
  }

  RpnOut out;
  out.objectness_loss = bce_logits_masked_mean(maps.obj, labels);
  if (pos_rows->empty()) {
    out.delta_loss = constant(Tensord::scalar(0.0));
  } else {
    auto base_index = std::make_shared<std::vector<int>>();
    for (int r : *pos_rows) {
      const int k = r / hw, loc = r % hw;
      base_index->push_back((k * 4) * hw + loc);
    }
    out.delta_loss = smooth_l1_mean(maps.delta, base_index, pos_deltas, hw);
  }
  out.proposals = decode_proposals(maps, anchors, image_w, image_h);
  return out;
}

std::vector<BoxF> Rpn::propose(const Var& c4, int image_w, int image_h) {
  Maps maps = heads(c4);
  std::vector<BoxF> anchors = make_anchors(maps.obj->value.dim(1), maps.obj->value.dim(2), cfg_);
  anchors_built_ += static_cast<long>(anchors.size());
  return decode_proposals(maps, anchors, image_w, image_h);
}

RoiEmbedHead RoiEmbedHead::create(ParamStore& ps, const std::string& prefix, int in_channels,
                                  int d, int pool, std::mt19937_64& rng, int stage_convs) {
  RoiEmbedHead h;
  h.d_ = d;
  h.pool_ = pool;
  int cin = in_channels;
  for (int i = 0; i < stage_convs; ++i) {
    h.stage_.push_back(ConvBlock::create(ps, prefix + ".stage." + std::to_string(i), cin, d, 3,
                                         1, gn_groups_for(d), rng));
    cin = d;
  }
  h.proj_ = LinearLayer::create(ps, prefix + ".proj", d, d, rng);
  return h;
}

Var RoiEmbedHead::embed(const Var& c4, const std::vector<BoxF>& boxes, int stride,
                        std::vector<uint8_t>* degenerate) const {
  if (boxes.empty()) throw std::invalid_argument("RoiEmbedHead::embed: no boxes");
  std::vector<BoxF> valid;
  std::vector<int> valid_pos;
  std::vector<uint8_t> flags(boxes.size(), 0);
  for (size_t i = 0; i < boxes.size(); ++i) {
    if (boxes[i].area() < 1.0) {
      flags[i] = 1;
      std::cerr << "roi_embed: skipping degenerate box (area < 1 px)\n";
      continue;
    }
    valid.push_back(boxes[i]);
    valid_pos.push_back(static_cast<int>(i));
  }
  if (degenerate) *degenerate = flags;

  Var emb_valid;
  if (!valid.empty()) {
    Var pooled = roi_align(c4, valid, 1.0 / stride, pool_);
    std::vector<Var> rows;
    rows.reserve(valid.size());
    for (size_t i = 0; i < valid.size(); ++i) {
      Var r = select_batch(pooled, static_cast<int>(i));
      for (const auto& blk : stage_) r = blk.forward(r);
      rows.push_back(spatial_mean(r));
    }
    emb_valid = rows_normalize(proj_.forward(stack_rows(rows)));
  }
  if (valid.size() == boxes.size()) return emb_valid;

  std::vector<Var> out_rows(boxes.size());
  for (size_t i = 0; i < boxes.size(); ++i) out_rows[i] = constant(Tensord({1, d_}));
  for (size_t k = 0; k < valid_pos.size(); ++k)
    out_rows[static_cast<size_t>(valid_pos[k])] =
        slice_rows(emb_valid, {static_cast<int>(k)});
  return stack_rows(out_rows);
}

Var fuse_embeddings(const Var& e_align, const Var& e_roi) {
  if (e_align->value.ndim() != 2 || e_roi->value.ndim() != 2 ||
      e_align->value.dim(0) != e_roi->value.dim(0))
    throw std::invalid_argument("fuse_embeddings: row count mismatch");
  return rows_normalize(concat_cols(rows_normalize(e_align), rows_normalize(e_roi)));
}

}  // namespace alignps
