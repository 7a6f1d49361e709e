#include "alignps/reid_memory.hpp"

#include <map>
#include <stdexcept>

namespace alignps {

ReidMemory::ReidMemory(const ReidMemoryConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.num_ids <= 0 || cfg.d <= 0) throw std::invalid_argument("ReidMemory: empty memory");
  lut_ = Tensord::randn({cfg.num_ids, cfg.d}, rng);
  for (int i = 0; i < cfg.num_ids; ++i) lut_.mat().row(i).normalize();
}

Tensord ReidMemory::queue_matrix() const {
  Tensord q({std::max<int>(1, queue_count()), cfg_.d});
  if (queue_.empty()) return Tensord({0, cfg_.d});
  for (size_t i = 0; i < queue_.size(); ++i) q.mat().row(static_cast<Eigen::Index>(i)) = queue_[i];
  return q.reshaped({queue_count(), cfg_.d});
}

Tensord ReidMemory::combined_matrix() const {
  Tensord out({cfg_.num_ids + queue_count(), cfg_.d});
  out.mat().topRows(cfg_.num_ids) = lut_.mat();
  for (size_t i = 0; i < queue_.size(); ++i)
    out.mat().row(cfg_.num_ids + static_cast<Eigen::Index>(i)) = queue_[i];
  return out;
}

void ReidMemory::update(const Tensord& embeddings, const std::vector<int>& identities) {
  if (embeddings.ndim() != 2 || embeddings.dim(1) != cfg_.d)
    throw std::invalid_argument("ReidMemory::update: (B,D) embeddings expected");
  if (static_cast<size_t>(embeddings.dim(0)) != identities.size())
    throw std::invalid_argument("ReidMemory::update: identity count mismatch");

  std::map<int, std::vector<int>> by_id;
  for (size_t i = 0; i < identities.size(); ++i)
    by_id[identities[i]].push_back(static_cast<int>(i));

  for (const auto& [id, rows] : by_id) {
    if (id == kUnlabeled) continue;
    if (id < 0 || id >= cfg_.num_ids)
      throw std::invalid_argument("ReidMemory::update: identity out of range");
    if (cfg_.momentum >= 1.0) continue;  // gamma = 1 leaves the LUT untouched
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(cfg_.d);
    for (int r : rows) mean += embeddings.mat().row(r).transpose();
    mean /= static_cast<double>(rows.size());
    Eigen::VectorXd v = cfg_.momentum * lut_.mat().row(id).transpose() +
                        (1.0 - cfg_.momentum) * mean;
    const double norm = v.norm();
    if (norm > 1e-12) lut_.mat().row(id) = (v / norm).transpose();
  }

  for (size_t i = 0; i < identities.size(); ++i) {
    if (identities[i] != kUnlabeled) continue;
    Eigen::VectorXd u = embeddings.mat().row(static_cast<Eigen::Index>(i)).transpose();
    const double norm = u.norm();
    if (norm > 1e-12) u /= norm;
    queue_.push_back(u);
    while (static_cast<int>(queue_.size()) > cfg_.queue_size) queue_.erase(queue_.begin());
  }
}

void ReidMemory::set_state(Tensord lut, Tensord queue, int queue_len) {
  if (lut.ndim() != 2 || lut.dim(0) != cfg_.num_ids || lut.dim(1) != cfg_.d)
    throw std::invalid_argument("ReidMemory::set_state: LUT shape mismatch");
  lut_ = std::move(lut);
  queue_.clear();
  for (int i = 0; i < queue_len; ++i) {
    Eigen::VectorXd row(cfg_.d);
    for (int c = 0; c < cfg_.d; ++c) row[c] = queue(i, c);
    queue_.push_back(std::move(row));
  }
}

Var oim_probabilities(const Var& embeddings, const ReidMemory& mem) {
  if (mem.num_ids() + mem.queue_count() == 0)
    throw std::invalid_argument("oim_probabilities: empty memory");
  Var logits = scale(matmul_const_t(embeddings, mem.combined_matrix()),
                     1.0 / mem.config().temperature);
  return exp_op(log_softmax_rows(logits));
}

Var oim_labeled_posteriors(const Var& embeddings, const ReidMemory& mem) {
  Var logits = scale(matmul_const_t(embeddings, mem.lut()), 1.0 / mem.config().temperature);
  return exp_op(log_softmax_rows(logits));
}

Var oim_loss(const Var& embeddings, const std::vector<int>& identities, const ReidMemory& mem,
             bool focal, double gamma_f) {
  if (embeddings->value.ndim() != 2 ||
      static_cast<size_t>(embeddings->value.dim(0)) != identities.size())
    throw std::invalid_argument("oim_loss: embedding/identity mismatch");
  std::vector<int> rows, targets;
  for (size_t i = 0; i < identities.size(); ++i) {
    if (identities[i] == kUnlabeled) continue;
    if (identities[i] < 0 || identities[i] >= mem.num_ids())
      throw std::invalid_argument("oim_loss: identity out of range");
    rows.push_back(static_cast<int>(i));
    targets.push_back(identities[i]);
  }
  if (rows.empty()) return constant(Tensord::scalar(0.0));

  Var labeled = slice_rows(embeddings, rows);
  Var logits = scale(matmul_const_t(labeled, mem.combined_matrix()),
                     1.0 / mem.config().temperature);
  Var logp_t = gather_rows_elem(log_softmax_rows(logits), targets);
  return mean_vec(focal_nll(logp_t, focal ? gamma_f : 0.0));
}

Var toim_triplet_loss(const Var& embeddings, const std::vector<int>& identities,
                      const ReidMemory& mem, const TripletConfig& cfg) {
  if (embeddings->value.ndim() != 2 ||
      static_cast<size_t>(embeddings->value.dim(0)) != identities.size())
    throw std::invalid_argument("toim_triplet_loss: embedding/identity mismatch");
  const int d = embeddings->value.dim(1);

  // Candidate sets per labeled identity: batch rows plus (optionally) the
  // gradient-constant LUT entry.
  struct Point {
    int row = -1;   // batch row, or -1 for a LUT anchor
    int set = 0;
    Eigen::VectorXd lut;  // used when row < 0
  };
  std::map<int, int> set_of_id;
  auto points = std::make_shared<std::vector<Point>>();
  for (size_t i = 0; i < identities.size(); ++i) {
    const int id = identities[i];
    if (id == kUnlabeled) continue;
    if (!set_of_id.count(id)) set_of_id[id] = static_cast<int>(set_of_id.size());
    points->push_back({static_cast<int>(i), set_of_id[id], {}});
  }
  if (set_of_id.size() < 2) return constant(Tensord::scalar(0.0));
  if (cfg.use_lut_anchors)
    for (const auto& [id, set] : set_of_id) {
      Point p;
      p.row = -1;
      p.set = set;
      p.lut = mem.lut().mat().row(id).transpose();
      points->push_back(std::move(p));
    }

  auto pairs_pos = std::make_shared<std::vector<std::pair<int, int>>>();
  auto pairs_neg = std::make_shared<std::vector<std::pair<int, int>>>();
  for (size_t a = 0; a < points->size(); ++a)
    for (size_t b = a + 1; b < points->size(); ++b) {
      if ((*points)[a].set == (*points)[b].set)
        pairs_pos->emplace_back(static_cast<int>(a), static_cast<int>(b));
      else
        pairs_neg->emplace_back(static_cast<int>(a), static_cast<int>(b));
    }
  if (pairs_pos->empty() || pairs_neg->empty()) return constant(Tensord::scalar(0.0));

  auto point_vec = [d](const std::vector<Point>& pts, const Tensord& emb, int i) {
    return pts[static_cast<size_t>(i)].row >= 0
               ? Eigen::VectorXd(emb.mat().row(pts[static_cast<size_t>(i)].row).transpose())
               : pts[static_cast<size_t>(i)].lut;
  };

  auto pair_dist = [points, point_vec](const Tensord& emb, const std::pair<int, int>& pr) {
    return (point_vec(*points, emb, pr.first) - point_vec(*points, emb, pr.second)).norm();
  };

  double total = 0.0;
  for (const auto& pp : *pairs_pos)
    for (const auto& pn : *pairs_neg) {
      const double h = cfg.margin + pair_dist(embeddings->value, pp) -
                       pair_dist(embeddings->value, pn);
      if (h > 0.0) total += h;
    }
  const double n_combo =
      static_cast<double>(pairs_pos->size()) * static_cast<double>(pairs_neg->size());
  total /= n_combo;

  const double margin = cfg.margin;
  return make_op(Tensord::scalar(total), {embeddings},
                 [embeddings, points, pairs_pos, pairs_neg, pair_dist, point_vec, n_combo,
                  margin](Node& n) {
    if (!embeddings->requires_grad) return;
    auto g = embeddings->ensure_grad().mat();
    const double go = n.grad[0] / n_combo;
    // d||a-b||/da = (a-b)/||a-b||; hinge gates each (pos,neg) combination.
    auto add_pair_grad = [&](const std::pair<int, int>& pr, double w) {
      const auto& pa = (*points)[static_cast<size_t>(pr.first)];
      const auto& pb = (*points)[static_cast<size_t>(pr.second)];
      Eigen::VectorXd diff = point_vec(*points, embeddings->value, pr.first) -
                             point_vec(*points, embeddings->value, pr.second);
      const double dist = diff.norm();
      if (dist < 1e-12) return;
      diff /= dist;
      if (pa.row >= 0) g.row(pa.row) += w * diff.transpose();
      if (pb.row >= 0) g.row(pb.row) -= w * diff.transpose();
    };
    for (const auto& pp : *pairs_pos)
      for (const auto& pn : *pairs_neg) {
        const double h = margin + pair_dist(embeddings->value, pp) -
                         pair_dist(embeddings->value, pn);
        if (h <= 0.0) continue;
        add_pair_grad(pp, go);
        add_pair_grad(pn, -go);
      }
  });
}

Var toim_loss(const Var& embeddings, const std::vector<int>& identities, const ReidMemory& mem,
              const TripletConfig& cfg, bool focal, double gamma_f) {
  return add(toim_triplet_loss(embeddings, identities, mem, cfg),
             oim_loss(embeddings, identities, mem, focal, gamma_f));
}

}  // namespace alignps
