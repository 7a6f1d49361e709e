#include "alignps/mutual_learning.hpp"

#include <cmath>
#include <stdexcept>

namespace alignps {

MineEstimator MineEstimator::create(ParamStore& ps, const std::string& prefix, int dx, int dy,
                                    std::mt19937_64& rng, int hidden) {
  MineEstimator m;
  m.fc1 = LinearLayer::create(ps, prefix + ".fc1", dx + dy, hidden, rng);
  m.fc2 = LinearLayer::create(ps, prefix + ".fc2", hidden, hidden, rng);
  m.fc3 = LinearLayer::create(ps, prefix + ".fc3", hidden, 1, rng);
  return m;
}

Var MineEstimator::statistic(const Var& x, const Var& y) const {
  Var h = concat_cols(x, y);
  h = tanh_op(fc1.forward(h));
  h = tanh_op(fc2.forward(h));
  return fc3.forward(h);
}

Var mine_lower_bound(const Var& xs, const Var& ys, const MineEstimator& est) {
  if (xs->value.ndim() != 2 || ys->value.ndim() != 2 ||
      xs->value.dim(0) != ys->value.dim(0))
    throw std::invalid_argument("mine_lower_bound: row-aligned (B,D) inputs expected");
  const int b = xs->value.dim(0);
  if (b < 2) return constant(Tensord::scalar(0.0));

  std::vector<int> perm(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) perm[static_cast<size_t>(i)] = (i + 1) % b;

  Var joint = mean_vec(est.statistic(xs, ys));
  Var marginal = logmeanexp_vec(est.statistic(xs, slice_rows(ys, perm)));
  return sub(joint, marginal);
}

Var mine_loss(const Var& xs, const Var& ys, const MineEstimator& est) {
  return scale(mine_lower_bound(xs, ys, est), -1.0);
}

Var kl_consensus_loss(const Var& p_a, const Var& p_r, KlTeacher teacher, double eps) {
  if (!p_a->value.same_shape(p_r->value) || p_a->value.ndim() != 2)
    throw std::invalid_argument("kl_consensus_loss: matching (B,L) rows expected");
  const int b = p_a->value.dim(0), l = p_a->value.dim(1);
  for (int r = 0; r < b; ++r) {
    const double sa = p_a->value.mat().row(r).sum();
    const double sr = p_r->value.mat().row(r).sum();
    if (std::abs(sa - 1.0) > 1e-4 || std::abs(sr - 1.0) > 1e-4)
      throw std::invalid_argument("kl_consensus_loss: rows must sum to 1 (got " +
                                  std::to_string(sa) + ", " + std::to_string(sr) + ")");
  }

  double total = 0.0;
  for (int r = 0; r < b; ++r)
    for (int c = 0; c < l; ++c) {
      const double pa = p_a->value(r, c), pr = p_r->value(r, c);
      total += pa * (std::log(pa + eps) - std::log(pr + eps));
    }
  total /= b;

  return make_op(Tensord::scalar(total), {p_a, p_r}, [p_a, p_r, teacher, eps, b, l](Node& n) {
    const double go = n.grad[0] / b;
    const bool grad_a = teacher != KlTeacher::kAlign;  // teacher side is a constant target
    const bool grad_r = teacher != KlTeacher::kRoi;
    if (grad_r && p_r->requires_grad) {
      auto& g = p_r->ensure_grad();
      for (int r = 0; r < b; ++r)
        for (int c = 0; c < l; ++c)
          g(r, c) += go * (-p_a->value(r, c) / (p_r->value(r, c) + eps));
    }
    if (grad_a && p_a->requires_grad) {
      auto& g = p_a->ensure_grad();
      for (int r = 0; r < b; ++r)
        for (int c = 0; c < l; ++c) {
          const double pa = p_a->value(r, c);
          g(r, c) += go * (std::log(pa + eps) - std::log(p_r->value(r, c) + eps) +
                           pa / (pa + eps));
        }
    }
  });
}

Var diversity_loss(const Var& x_a, const Var& x_r) {
  if (!x_a->value.same_shape(x_r->value) || x_a->value.ndim() != 2)
    throw std::invalid_argument("diversity_loss: row-aligned (B,D) inputs expected");
  for (int r = 0; r < x_a->value.dim(0); ++r) {
    if (std::abs(x_a->value.mat().row(r).norm() - 1.0) > 1e-3 ||
        std::abs(x_r->value.mat().row(r).norm() - 1.0) > 1e-3)
      throw std::invalid_argument("diversity_loss: rows must be unit-norm");
  }
  return dot_rows_mean(x_a, x_r);
}

}  // namespace alignps
