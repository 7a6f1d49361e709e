// Differentiable tensor ops. Activations are per-image (C,H,W); embedding
// batches are (B,D) row matrices.
#pragma once

#include <utility>
#include <vector>

#include "alignps/autograd.hpp"

namespace alignps {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double c);
// Weighted sum of scalar terms; shapes must all be {1}.
Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights);

Var relu(const Var& x);
Var tanh_op(const Var& x);
Var sigmoid(const Var& x);
// exp with a hard clamp of the argument to [lo, hi]; zero gradient outside.
Var exp_clamped(const Var& x, double lo = -12.0, double hi = 12.0);
Var exp_op(const Var& x);

// Broadcast-multiply by a 1-element variable (learnable scalar).
Var mul_scalar_var(const Var& x, const Var& s);

Var detach(const Var& x);

// x: (C,H,W), w: (Co,Ci,kh,kw), b: (Co). Zero padding.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

// Per-image group normalization with per-channel affine.
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);

Var upsample_nearest2(const Var& x);

// Channel concatenation of two (C,H,W) maps with equal spatial dims.
Var concat_ch(const Var& a, const Var& b);

// x: (B,Din), w: (Dout,Din), b: (Dout) -> (B,Dout)
Var linear(const Var& x, const Var& w, const Var& b);

// Row-wise L2 normalization of a (B,D) matrix.
Var rows_normalize(const Var& x, double eps = 1e-12);

// Gather channel vectors at (y,x) locations of a (C,H,W) map -> (B,C).
Var gather_channels(const Var& map, const std::vector<std::pair<int, int>>& locations);

// Stack N vectors of equal length into an (N,D) matrix.
Var stack_rows(const std::vector<Var>& rows);

// Vertically concatenate (B_i, D) blocks into a (sum B_i, D) matrix.
Var vconcat_rows(const std::vector<Var>& blocks);

// Column concatenation of two (B,Da), (B,Db) matrices -> (B,Da+Db).
Var concat_cols(const Var& a, const Var& b);

// Mean over the spatial dims of a (C,H,W) map -> (C).
Var spatial_mean(const Var& x);

// x: (B,D) times a constant matrix M: (R,D) transposed -> (B,R).
Var matmul_const_t(const Var& x, const Tensord& m);

Var log_softmax_rows(const Var& x);

// out[b] = x(b, idx[b])
Var gather_rows_elem(const Var& x, const std::vector<int>& idx);

// Select rows of a (B,D) matrix -> (|idx|, D); duplicates allowed.
Var slice_rows(const Var& x, const std::vector<int>& idx);

// Select one entry of the leading dim of an (N,C,H,W) tensor -> (C,H,W).
Var select_batch(const Var& x, int n);

// Elementwise focal negative log-likelihood of log-probabilities:
// f(lp) = -(1 - exp(lp))^gamma * lp. gamma = 0 reduces to plain NLL.
Var focal_nll(const Var& logp, double gamma);

Var mean_vec(const Var& x);
Var sum_vec(const Var& x);
Var logmeanexp_vec(const Var& x);

// Mean over rows of the per-row dot product of two (B,D) matrices.
Var dot_rows_mean(const Var& a, const Var& b);

}  // namespace alignps
