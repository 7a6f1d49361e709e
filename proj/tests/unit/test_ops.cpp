#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "alignps/ops.hpp"
#include "testing.hpp"

using namespace alignps;
namespace tt = alignps::testing;

namespace {

// Direct convolution, the slow way, for checking the im2col path.
Tensord naive_conv2d(const Tensord& x, const Tensord& w, const Tensord& b, int stride, int pad) {
  const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  Tensord out({co, ho, wo});
  for (int oc = 0; oc < co; ++oc)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = b[oc];
        for (int ic = 0; ic < ci; ++ic)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride - pad + ky;
              const int ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += w(oc, ic, ky, kx) * x(ic, iy, ix);
            }
        out(oc, oy, ox) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches naive convolution") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    auto x = tt::randn({3, 7, 6}, seed);
    auto w = tt::randn({4, 3, 3, 3}, seed + 10);
    auto b = tt::randn({4}, seed + 20);
    for (int stride : {1, 2}) {
      Var vx = leaf(x), vw = leaf(w), vb = leaf(b);
      Var out = conv2d(vx, vw, vb, stride, 1);
      Tensord ref = naive_conv2d(x, w, b, stride, 1);
      REQUIRE(out->value.same_shape(ref));
      for (Eigen::Index i = 0; i < ref.numel(); ++i)
        CHECK(out->value[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  Var x = leaf(tt::randn({2, 5, 5}, 7));
  Var w = leaf(tt::randn({3, 2, 3, 3}, 8, 0.5));
  Var b = leaf(tt::randn({3}, 9));
  auto fwd = [&] { return mean_vec(conv2d(x, w, b, 1, 1)); };
  CHECK(tt::grad_check(fwd, {x, w, b}) < 1e-6);
}

TEST_CASE("pointwise conv gradients") {
  Var x = leaf(tt::randn({4, 3, 3}, 17));
  Var w = leaf(tt::randn({2, 4, 1, 1}, 18, 0.5));
  Var b = leaf(tt::randn({2}, 19));
  auto fwd = [&] { return mean_vec(conv2d(x, w, b, 1, 0)); };
  CHECK(tt::grad_check(fwd, {x, w, b}) < 1e-6);
}

TEST_CASE("group_norm normalizes and backprops") {
  Var x = leaf(tt::randn({8, 4, 4}, 21));
  Var gamma = leaf(tt::rand_uniform({8}, 22, 0.5, 1.5));
  Var beta = leaf(tt::randn({8}, 23, 0.1));
  Var y = group_norm(x, gamma, beta, 2);

  // Per-group statistics of the normalized activations (affine removed).
  const int gsz = 4 * 4 * 4;
  for (int g = 0; g < 2; ++g) {
    double mu = 0.0, var = 0.0;
    for (int c = 4 * g; c < 4 * (g + 1); ++c)
      for (int i = 0; i < 16; ++i) {
        const double xn = (y->value(c, i / 4, i % 4) - beta->value[c]) / gamma->value[c];
        mu += xn;
        var += xn * xn;
      }
    mu /= gsz;
    var = var / gsz - mu * mu;
    CHECK(std::abs(mu) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }

  auto fwd = [&] { return mean_vec(relu(group_norm(x, gamma, beta, 2))); };
  CHECK(tt::grad_check(fwd, {x, gamma, beta}, 1e-6, 64) < 1e-5);
}

TEST_CASE("elementwise and reduction gradients") {
  Var x = leaf(tt::randn({3, 4}, 31));
  auto fwd_tanh = [&] { return mean_vec(tanh_op(x)); };
  CHECK(tt::grad_check(fwd_tanh, {x}) < 1e-6);
  auto fwd_sig = [&] { return mean_vec(sigmoid(x)); };
  CHECK(tt::grad_check(fwd_sig, {x}) < 1e-6);
  auto fwd_exp = [&] { return mean_vec(exp_clamped(x)); };
  CHECK(tt::grad_check(fwd_exp, {x}) < 1e-6);
  auto fwd_lme = [&] { return logmeanexp_vec(x); };
  CHECK(tt::grad_check(fwd_lme, {x}) < 1e-6);
}

TEST_CASE("linear, normalize, concat, gather gradients") {
  Var x = leaf(tt::randn({3, 5}, 41));
  Var w = leaf(tt::randn({4, 5}, 42, 0.5));
  Var b = leaf(tt::randn({4}, 43));
  auto fwd = [&] { return mean_vec(rows_normalize(linear(x, w, b))); };
  CHECK(tt::grad_check(fwd, {x, w, b}) < 1e-6);

  Var a2 = leaf(tt::randn({3, 2}, 44));
  Var b2 = leaf(tt::randn({3, 3}, 45));
  auto fwd_cc = [&] { return mean_vec(rows_normalize(concat_cols(a2, b2))); };
  CHECK(tt::grad_check(fwd_cc, {a2, b2}) < 1e-6);

  Var map = leaf(tt::randn({4, 3, 3}, 46));
  std::vector<std::pair<int, int>> locs{{0, 0}, {2, 1}, {2, 1}};
  auto fwd_g = [&] { return mean_vec(gather_channels(map, locs)); };
  CHECK(tt::grad_check(fwd_g, {map}) < 1e-6);
}

TEST_CASE("upsample and channel concat") {
  Var x = leaf(tt::randn({2, 3, 2}, 51));
  Var up = upsample_nearest2(x);
  REQUIRE(up->value.shape() == std::vector<int>({2, 6, 4}));
  CHECK(up->value(1, 5, 3) == x->value(1, 2, 1));
  auto fwd = [&] { return mean_vec(upsample_nearest2(x)); };
  CHECK(tt::grad_check(fwd, {x}) < 1e-6);

  Var y = leaf(tt::randn({3, 3, 2}, 52));
  auto fwd_cat = [&] { return mean_vec(relu(concat_ch(x, y))); };
  CHECK(tt::grad_check(fwd_cat, {x, y}) < 1e-6);
}

TEST_CASE("log_softmax rows sum to one in probability space") {
  Var x = leaf(tt::randn({4, 6}, 61, 2.0));
  Var ls = log_softmax_rows(x);
  for (int b = 0; b < 4; ++b) {
    double s = 0.0;
    for (int c = 0; c < 6; ++c) s += std::exp(ls->value(b, c));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-10));
  }
  std::vector<int> idx{0, 3, 5, 2};
  auto fwd = [&] { return mean_vec(focal_nll(gather_rows_elem(log_softmax_rows(x), idx), 2.0)); };
  CHECK(tt::grad_check(fwd, {x}) < 1e-5);
}

TEST_CASE("focal_nll with gamma zero is plain NLL") {
  Var lp = leaf(tt::rand_uniform({5}, 71, -3.0, -0.01));
  Var f0 = focal_nll(lp, 0.0);
  for (int i = 0; i < 5; ++i) CHECK(f0->value[i] == doctest::Approx(-lp->value[i]));
  auto fwd = [&] { return mean_vec(focal_nll(lp, 2.0)); };
  CHECK(tt::grad_check(fwd, {lp}) < 1e-6);
}

TEST_CASE("dot_rows_mean and scalar plumbing") {
  Var a = leaf(tt::randn({4, 3}, 81));
  Var b = leaf(tt::randn({4, 3}, 82));
  auto fwd = [&] { return dot_rows_mean(rows_normalize(a), rows_normalize(b)); };
  CHECK(tt::grad_check(fwd, {a, b}) < 1e-6);

  Var s = leaf(Tensord::scalar(1.3));
  auto fwd2 = [&] { return mean_vec(mul_scalar_var(a, s)); };
  CHECK(tt::grad_check(fwd2, {a, s}) < 1e-6);
}

TEST_CASE("weighted_sum combines scalar losses") {
  Var a = leaf(Tensord::scalar(2.0));
  Var b = leaf(Tensord::scalar(-1.0));
  Var t = weighted_sum({a, b}, {0.5, 2.0});
  CHECK(t->value[0] == doctest::Approx(-1.0));
  auto fwd = [&] { return weighted_sum({a, b}, {0.5, 2.0}); };
  CHECK(tt::grad_check(fwd, {a, b}) < 1e-8);
}

TEST_CASE("backward accumulates through shared subgraphs") {
  Var x = leaf(Tensord::scalar(3.0));
  auto fwd = [&] {
    Var y = scale(x, 2.0);
    return add(y, y);  // d/dx = 4
  };
  Var loss = fwd();
  zero_grad(x);
  backward(loss);
  CHECK(x->grad[0] == doctest::Approx(4.0));
}

TEST_CASE("no-grad mode detaches the tape") {
  Var x = leaf(Tensord::scalar(2.0));
  {
    NoGradGuard ng;
    Var y = scale(x, 3.0);
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
  }
  Var z = detach(scale(x, 3.0));
  CHECK_FALSE(z->requires_grad);
}
