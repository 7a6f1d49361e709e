#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "alignps/deform_conv.hpp"
#include "alignps/ops.hpp"
#include "alignps/roi_align.hpp"
#include "testing.hpp"

using namespace alignps;
namespace tt = alignps::testing;

TEST_CASE("zero offsets reduce to the standard 3x3 convolution") {
  std::mt19937_64 rng(123);
  std::uniform_int_distribution<int> szd(3, 9), chd(1, 4);
  for (int trial = 0; trial < 25; ++trial) {
    const int ci = chd(rng), co = chd(rng), h = szd(rng), w = szd(rng);
    Var x = leaf(Tensord::randn({ci, h, w}, rng), false);
    Var wt = leaf(Tensord::randn({co, ci, 3, 3}, rng), false);
    Var b = leaf(Tensord::randn({co}, rng), false);
    Var off = leaf(Tensord({18, h, w}), false);
    Var yd = deform_conv2d(x, wt, b, off);
    Var ys = conv2d(x, wt, b, 1, 1);
    double max_diff = (yd->value.array() - ys->value.array()).abs().maxCoeff();
    CHECK(max_diff <= 1e-6);
  }
}

TEST_CASE("constant input with in-bounds offsets yields constant * sum(w)") {
  const double c0 = 0.75;
  Var x = leaf(Tensord::full({2, 9, 9}, c0), false);
  Var wt = leaf(tt::randn({1, 2, 3, 3}, 5), false);
  Var b = leaf(Tensord({1}), false);
  Var off = leaf(tt::rand_uniform({18, 9, 9}, 6, -0.9, 0.9), false);
  Var y = deform_conv2d(x, wt, b, off);
  const double wsum = wt->value.array().sum();
  // Interior locations: every sample position stays inside the support.
  for (int yy = 2; yy < 7; ++yy)
    for (int xx = 2; xx < 7; ++xx)
      CHECK(y->value(0, yy, xx) == doctest::Approx(c0 * wsum).epsilon(1e-10));
}

TEST_CASE("integer (+1,0) offsets equal a shifted standard conv at interior points") {
  // Oracle by direct indexing: shifting every tap by +1 in y samples x(y+1+ky, x+kx).
  auto xv = tt::randn({1, 5, 5}, 77);
  Var x = leaf(xv, false);
  Var wt = leaf(tt::randn({1, 1, 3, 3}, 78), false);
  Var b = leaf(Tensord({1}), false);
  Tensord offv({18, 5, 5});
  for (int k = 0; k < 9; ++k)
    for (int i = 0; i < 25; ++i) offv(2 * k, i / 5, i % 5) = 1.0;  // dy=+1, dx=0
  Var off = leaf(offv, false);
  Var y = deform_conv2d(x, wt, b, off);

  Tensord shifted({1, 5, 5});
  for (int yy = 0; yy < 4; ++yy)
    for (int xx = 0; xx < 5; ++xx) shifted(0, yy, xx) = xv(0, yy + 1, xx);
  Var ys = conv2d(leaf(shifted, false), wt, b, 1, 1);
  // Interior in y: rows 1..2 keep all shifted taps within the copied region.
  for (int yy = 1; yy <= 2; ++yy)
    for (int xx = 1; xx <= 3; ++xx)
      CHECK(y->value(0, yy, xx) == doctest::Approx(ys->value(0, yy, xx)).epsilon(1e-12));
}

TEST_CASE("deformable conv gradients match finite differences") {
  for (uint64_t seed : {11u, 12u, 13u, 14u, 15u}) {
    Var x = leaf(tt::randn({2, 5, 5}, seed));
    Var wt = leaf(tt::randn({2, 2, 3, 3}, seed + 100, 0.5));
    Var b = leaf(tt::randn({2}, seed + 200));
    // Fractional offsets keep the bilinear kernel away from its integer kinks.
    Var off = leaf(tt::rand_uniform({18, 5, 5}, seed + 300, -1.3, 1.3));
    for (Eigen::Index i = 0; i < off->value.numel(); ++i) {
      double frac = off->value[i] - std::floor(off->value[i]);
      if (frac < 0.15 || frac > 0.85) off->value[i] += 0.3;
    }
    auto fwd = [&] { return mean_vec(deform_conv2d(x, wt, b, off)); };
    CHECK(tt::grad_check(fwd, {x, wt, b, off}, 1e-6, 60, seed) < 1e-4);
  }
}

TEST_CASE("offset shape mismatch is rejected") {
  Var x = leaf(tt::randn({1, 4, 4}, 1), false);
  Var wt = leaf(tt::randn({1, 1, 3, 3}, 2), false);
  Var b = leaf(Tensord({1}), false);
  Var off = leaf(Tensord({18, 3, 4}), false);
  CHECK_THROWS_AS(deform_conv2d(x, wt, b, off), std::invalid_argument);
}

TEST_CASE("roi_align of a constant map is constant for any box") {
  Var f = leaf(Tensord::full({3, 8, 8}, 2.5), false);
  std::vector<BoxF> boxes{{4.0, 4.0, 28.0, 60.0}, {0.0, 0.0, 64.0, 64.0}};
  Var out = roi_align(f, boxes, 1.0 / 8.0, 7);
  for (Eigen::Index i = 0; i < out->value.numel(); ++i)
    CHECK(out->value[i] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("roi_align on a ramp matches the direct bilinear oracle") {
  // f(y,x) = 0.25*x - 0.1*y; bilinear sampling of a linear map is exact in
  // the interior, so each pooled cell equals the mean of its sample points.
  Tensord fv({1, 10, 10});
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) fv(0, y, x) = 0.25 * x - 0.1 * y;
  Var f = leaf(fv, false);
  BoxF whole{8.0, 8.0, 72.0, 72.0};       // feature coords 1..9
  BoxF inset{9.0, 9.0, 71.0, 71.0};
  Var out = roi_align(f, {whole, inset}, 1.0 / 8.0, 7, 2);

  auto oracle = [&](const BoxF& b, int py, int px) {
    const double cw = (b.width() / 8.0) / 7.0, ch = (b.height() / 8.0) / 7.0;
    double acc = 0.0;
    for (int iy = 0; iy < 2; ++iy)
      for (int ix = 0; ix < 2; ++ix) {
        const double sy = b.y1 / 8.0 + (py + (iy + 0.5) / 2.0) * ch;
        const double sx = b.x1 / 8.0 + (px + (ix + 0.5) / 2.0) * cw;
        acc += 0.25 * sx - 0.1 * sy;
      }
    return acc / 4.0;
  };
  double max_pair_diff = 0.0;
  for (int py = 0; py < 7; ++py)
    for (int px = 0; px < 7; ++px) {
      CHECK(out->value(0, 0, py, px) == doctest::Approx(oracle(whole, py, px)).epsilon(1e-10));
      CHECK(out->value(1, 0, py, px) == doctest::Approx(oracle(inset, py, px)).epsilon(1e-10));
      max_pair_diff = std::max(
          max_pair_diff, std::abs(out->value(0, 0, py, px) - out->value(1, 0, py, px)));
    }
  // One-pixel inset only moves sample points by 1/8 feature cell.
  CHECK(max_pair_diff <= (0.25 + 0.1) * (1.0 / 8.0) + 1e-9);
}

TEST_CASE("roi_align gradients match finite differences") {
  Var f = leaf(tt::randn({2, 6, 6}, 91));
  std::vector<BoxF> boxes{{3.3, 2.1, 30.7, 41.2}, {10.0, 12.0, 44.0, 40.0}};
  auto fwd = [&] { return mean_vec(roi_align(f, boxes, 1.0 / 8.0, 5)); };
  CHECK(tt::grad_check(fwd, {f}, 1e-6, 50) < 1e-4);
}
