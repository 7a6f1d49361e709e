// Branch interaction losses: a neural mutual-information lower bound between
// the two re-id feature sets, KL consensus between identity posteriors, and
// cosine diversity.
#pragma once

#include "alignps/nn.hpp"

namespace alignps {

// Trainable statistic network T(x,y): concat -> two tanh hidden layers -> scalar.
struct MineEstimator {
  LinearLayer fc1, fc2, fc3;

  static MineEstimator create(ParamStore& ps, const std::string& prefix, int dx, int dy,
                              std::mt19937_64& rng, int hidden = 256);
  // (B,dx),(B,dy) -> (B,1)
  Var statistic(const Var& x, const Var& y) const;
};

// Donsker-Varadhan bound: mean_i T(x_i, y_i) - log mean_i exp(T(x_i, y_perm(i)))
// with a rotate-by-one derangement for the product-of-marginals term.
// Fewer than two rows -> constant 0. Gradients reach both inputs and T.
Var mine_lower_bound(const Var& xs, const Var& ys, const MineEstimator& est);

// L_mi = -I(X;Y) lower bound.
Var mine_loss(const Var& xs, const Var& ys, const MineEstimator& est);

enum class KlTeacher { kAlign, kRoi, kNone };

// Mean over the batch of KL(p_a || p_r) with epsilon-clamped logs. Rows must
// sum to one within 1e-4. The teacher side is treated as a constant target.
Var kl_consensus_loss(const Var& p_a, const Var& p_r, KlTeacher teacher = KlTeacher::kAlign,
                      double eps = 1e-8);

// Mean cosine similarity of row-aligned unit embeddings; minimizing it pushes
// the branch features apart.
Var diversity_loss(const Var& x_a, const Var& x_r);

}  // namespace alignps
