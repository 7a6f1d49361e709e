#include "alignps/search_eval.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>
#include <set>
#include <stdexcept>

namespace alignps {

std::vector<int> match_detections(const std::vector<BoxF>& boxes,
                                  const std::vector<double>& scores,
                                  const std::vector<PersonAnn>& gts, double iou_thresh) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<int> result(boxes.size(), -1);
  std::vector<char> gt_taken(gts.size(), 0);
  for (int di : order) {
    double best = iou_thresh;
    int arg = -1;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      if (gt_taken[gi]) continue;
      const double v = iou(boxes[static_cast<size_t>(di)], gts[gi].box);
      if (v >= best) {
        best = v;
        arg = static_cast<int>(gi);
      }
    }
    if (arg >= 0) {
      result[static_cast<size_t>(di)] = arg;
      gt_taken[static_cast<size_t>(arg)] = 1;
    }
  }
  return result;
}

namespace {

struct RankedEntry {
  double sim = 0.0;
  std::string scene_id;
  int det_index = 0;
  bool true_match = false;
};

}  // namespace

SearchMetrics search_map(const SearchSplit& split,
                         const std::map<std::string, SceneDetections>& detections,
                         const QueryEmbeddingFn& query_embed, double iou_thresh) {
  // Matched identity per detection, per scene.
  std::map<std::string, std::vector<int>> matched_identity;
  for (const auto& [sid, det] : detections) {
    const int idx = split.scene_index(sid);
    if (idx < 0) continue;
    const auto& persons = split.train[static_cast<size_t>(idx)].persons;
    auto match = match_detections(det.boxes, det.scores, persons, iou_thresh);
    std::vector<int> ids(det.boxes.size(), kNoIdentity);
    for (size_t i = 0; i < match.size(); ++i)
      if (match[i] >= 0) ids[i] = persons[static_cast<size_t>(match[i])].identity;
    matched_identity[sid] = std::move(ids);
  }

  SearchMetrics out;
  double ap_sum = 0.0;
  int top1_hits = 0;
  for (const auto& q : split.queries) {
    int n_gt = 0;
    for (const auto& sid : q.gallery) {
      const int idx = split.scene_index(sid);
      if (idx < 0) throw std::runtime_error("search_map: unknown gallery scene " + sid);
      for (const auto& p : split.train[static_cast<size_t>(idx)].persons)
        if (p.identity == q.identity) ++n_gt;
    }
    if (n_gt == 0) {
      std::cerr << "search_map: query identity " << q.identity
                << " absent from its gallery, excluded\n";
      ++out.n_excluded;
      continue;
    }

    Eigen::VectorXd qe = query_embed.fn(q.scene_id, q.box);
    std::vector<RankedEntry> ranked;
    for (const auto& sid : q.gallery) {
      auto it = detections.find(sid);
      if (it == detections.end()) continue;
      const auto& det = it->second;
      const auto& ids = matched_identity.at(sid);
      for (size_t i = 0; i < det.boxes.size(); ++i) {
        RankedEntry e;
        e.scene_id = sid;
        e.det_index = static_cast<int>(i);
        e.sim = det.embeddings.mat().row(static_cast<Eigen::Index>(i)).dot(qe.transpose());
        e.true_match = ids[i] == q.identity;
        ranked.push_back(std::move(e));
      }
    }
    std::sort(ranked.begin(), ranked.end(), [](const RankedEntry& a, const RankedEntry& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      if (a.scene_id != b.scene_id) return a.scene_id < b.scene_id;
      return a.det_index < b.det_index;
    });

    double ap = 0.0;
    int tp = 0;
    for (size_t k = 0; k < ranked.size(); ++k)
      if (ranked[k].true_match) {
        ++tp;
        ap += static_cast<double>(tp) / static_cast<double>(k + 1);
      }
    ap /= n_gt;
    ap_sum += ap;
    if (!ranked.empty() && ranked[0].true_match) ++top1_hits;
    ++out.n_queries;
  }

  if (out.n_queries == 0)
    throw std::runtime_error("search_map: no evaluable queries (empty query set)");
  out.map = ap_sum / out.n_queries;
  out.top1 = static_cast<double>(top1_hits) / out.n_queries;
  return out;
}

DetectionMetrics detection_metrics(const std::map<std::string, SceneDetections>& detections,
                                   const std::vector<SceneSample>& scenes, double iou_thresh) {
  struct Entry {
    double score;
    std::string scene_id;
    int index;
    bool tp;
  };
  std::vector<Entry> entries;
  DetectionMetrics out;
  int matched_gt = 0;
  for (const auto& scene : scenes) {
    out.n_gt += static_cast<int>(scene.persons.size());
    auto it = detections.find(scene.scene_id);
    if (it == detections.end()) continue;
    const auto& det = it->second;
    auto match = match_detections(det.boxes, det.scores, scene.persons, iou_thresh);
    for (size_t i = 0; i < det.boxes.size(); ++i) {
      entries.push_back({det.scores[i], scene.scene_id, static_cast<int>(i), match[i] >= 0});
      if (match[i] >= 0) ++matched_gt;
    }
  }
  out.n_det = static_cast<int>(entries.size());
  if (out.n_gt == 0) return out;
  out.recall = static_cast<double>(matched_gt) / out.n_gt;
  if (entries.empty()) return out;

  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.scene_id != b.scene_id) return a.scene_id < b.scene_id;
    return a.index < b.index;
  });
  const size_t n = entries.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (size_t k = 0; k < n; ++k) {
    if (entries[k].tp) ++tp;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / out.n_gt;
  }
  // All-points interpolation: precision envelope from the right.
  for (size_t k = n - 1; k-- > 0;) precision[k] = std::max(precision[k], precision[k + 1]);
  double ap = 0.0, prev_r = 0.0;
  for (size_t k = 0; k < n; ++k) {
    if (recall[k] > prev_r) {
      ap += (recall[k] - prev_r) * precision[k];
      prev_r = recall[k];
    }
  }
  out.ap = ap;
  return out;
}

std::vector<Query> galleries_of_size(const SearchSplit& split, int size) {
  if (size < 1) throw std::invalid_argument("galleries_of_size: size must be positive");
  if (size > static_cast<int>(split.train.size()) - 1)
    throw std::invalid_argument("galleries_of_size: size exceeds available scenes");

  std::vector<Query> out;
  for (const auto& q : split.queries) {
    std::vector<std::string> truth, distract;
    for (const auto& scene : split.train) {
      if (scene.scene_id == q.scene_id) continue;
      bool has_id = false;
      for (const auto& p : scene.persons)
        if (p.identity == q.identity) has_id = true;
      (has_id ? truth : distract).push_back(scene.scene_id);
    }
    Query nq = q;
    nq.gallery = truth;
    for (const auto& d : distract) {
      if (static_cast<int>(nq.gallery.size()) >= size) break;
      nq.gallery.push_back(d);
    }
    if (static_cast<int>(nq.gallery.size()) > size) nq.gallery.resize(static_cast<size_t>(size));
    out.push_back(std::move(nq));
  }
  return out;
}

std::vector<SweepPoint> gallery_size_sweep(const SearchSplit& split,
                                           const std::map<std::string, SceneDetections>& dets,
                                           const QueryEmbeddingFn& query_embed,
                                           const std::vector<int>& sizes) {
  std::vector<SweepPoint> out;
  for (int size : sizes) {
    SearchSplit resized = split;
    resized.queries = galleries_of_size(split, size);
    resized.gallery_size = size;
    SearchMetrics m = search_map(resized, dets, query_embed);
    out.push_back({size, m.map, m.top1});
  }
  return out;
}

}  // namespace alignps
