#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "alignps/roi_branch.hpp"
#include "testing.hpp"

using namespace alignps;
namespace tt = alignps::testing;

namespace {

RpnConfig small_rpn_cfg() {
  RpnConfig cfg;
  cfg.anchor_base = 24.0;
  return cfg;
}

// Exhaustive IoU-matrix matcher used as the oracle.
AnchorMatch brute_match(const std::vector<BoxF>& anchors, const std::vector<BoxF>& gt,
                        const RpnConfig& cfg) {
  AnchorMatch m;
  m.label.assign(anchors.size(), 0);
  m.matched.assign(anchors.size(), -1);
  if (gt.empty()) return m;
  for (size_t a = 0; a < anchors.size(); ++a) {
    double best = 0.0;
    int arg = -1;
    for (size_t g = 0; g < gt.size(); ++g)
      if (iou(anchors[a], gt[g]) > best) {
        best = iou(anchors[a], gt[g]);
        arg = static_cast<int>(g);
      }
    if (best >= cfg.pos_iou) {
      m.label[a] = 1;
      m.matched[a] = arg;
    } else if (best >= cfg.neg_iou) {
      m.label[a] = -1;
    }
  }
  for (size_t g = 0; g < gt.size(); ++g) {
    double best = 0.0;
    int arg = -1;
    for (size_t a = 0; a < anchors.size(); ++a)
      if (iou(anchors[a], gt[g]) > best) {
        best = iou(anchors[a], gt[g]);
        arg = static_cast<int>(a);
      }
    if (arg >= 0) {
      m.label[static_cast<size_t>(arg)] = 1;
      m.matched[static_cast<size_t>(arg)] = static_cast<int>(g);
    }
  }
  return m;
}

}  // namespace

TEST_CASE("an anchor exactly on a GT box is a matched positive") {
  auto cfg = small_rpn_cfg();
  std::vector<BoxF> anchors = make_anchors(4, 4, cfg);
  // Ratio-1 anchor at location (1,1): centered (24,24) with 24x24 extent.
  const BoxF gt = anchors[(1 * 4 + 1) * 3 + 0];
  auto m = match_anchors(anchors, {gt}, cfg);
  CHECK(m.label[(1 * 4 + 1) * 3 + 0] == 1);
  CHECK(m.matched[(1 * 4 + 1) * 3 + 0] == 0);
}

TEST_CASE("zero GT leaves all anchors negative and a zero delta loss") {
  ParamStore ps;
  std::mt19937_64 rng(2);
  Rpn rpn = Rpn::create(ps, "rpn", 8, small_rpn_cfg(), rng);
  Var c4 = leaf(tt::randn({8, 4, 4}, 3));
  auto out = rpn.forward_train(c4, {}, 64, 64);
  CHECK(out.delta_loss->value[0] == 0.0);
  CHECK(out.objectness_loss->value[0] > 0.0);
  auto m = match_anchors(make_anchors(4, 4, small_rpn_cfg()), {}, small_rpn_cfg());
  for (int l : m.label) CHECK(l == 0);
}

TEST_CASE("anchor matching equals the brute-force IoU matcher on toy cases") {
  auto cfg = small_rpn_cfg();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(2.0, 40.0), len(10.0, 30.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<BoxF> anchors = make_anchors(4, 4, cfg);
    anchors.resize(10 + trial % 20);  // toy subsets
    const double x = pos(rng), y = pos(rng);
    std::vector<BoxF> gt{{x, y, x + len(rng), y + len(rng)}};
    auto a = match_anchors(anchors, gt, cfg);
    auto b = brute_match(anchors, gt, cfg);
    CHECK(a.label == b.label);
    CHECK(a.matched == b.matched);
  }
}

TEST_CASE("rpn losses backpropagate into the shared features") {
  ParamStore ps;
  std::mt19937_64 rng(7);
  Rpn rpn = Rpn::create(ps, "rpn", 8, small_rpn_cfg(), rng);
  Var c4 = leaf(tt::randn({8, 4, 4}, 8));
  std::vector<BoxF> gt{{10, 8, 36, 40}};
  auto fwd = [&] {
    auto out = rpn.forward_train(c4, gt, 64, 64);
    return weighted_sum({out.objectness_loss, out.delta_loss}, {1.0, 1.0});
  };
  CHECK(tt::grad_check(fwd, {c4}, 1e-6, 40, 9) < 1e-4);
}

TEST_CASE("proposals are clipped, deduplicated and capped") {
  ParamStore ps;
  std::mt19937_64 rng(11);
  auto cfg = small_rpn_cfg();
  cfg.post_nms_topk = 8;
  Rpn rpn = Rpn::create(ps, "rpn", 8, cfg, rng);
  Var c4 = leaf(tt::randn({8, 6, 6}, 12), false);
  auto props = rpn.propose(c4, 96, 96);
  CHECK(props.size() <= 8);
  CHECK(rpn.anchors_built() == 6 * 6 * 3);
  for (const auto& p : props) {
    CHECK(p.x1 >= 0.0);
    CHECK(p.y2 <= 96.0);
    CHECK(p.width() >= 1.0);
  }
}

TEST_CASE("roi embeddings are unit rows and constant maps ignore the box") {
  ParamStore ps;
  std::mt19937_64 rng(13);
  RoiEmbedHead head = RoiEmbedHead::create(ps, "roi", 6, 8, 7, rng);
  Var c4 = leaf(Tensord::full({6, 6, 6}, 0.37), false);
  std::vector<BoxF> boxes{{8, 8, 40, 72}, {16, 24, 80, 88}};
  Var emb = head.embed(c4, boxes);
  REQUIRE(emb->value.shape() == std::vector<int>({2, 8}));
  for (int r = 0; r < 2; ++r)
    CHECK(emb->value.mat().row(r).norm() == doctest::Approx(1.0).epsilon(1e-6));
  // Pooling a constant map is box-independent, so the rows coincide.
  CHECK((emb->value.mat().row(0) - emb->value.mat().row(1)).norm() < 1e-9);
}

TEST_CASE("degenerate boxes are flagged and zero-filled") {
  ParamStore ps;
  std::mt19937_64 rng(17);
  RoiEmbedHead head = RoiEmbedHead::create(ps, "roi", 6, 8, 7, rng);
  Var c4 = leaf(tt::randn({6, 6, 6}, 18), false);
  std::vector<BoxF> boxes{{8, 8, 40, 72}, {16, 24, 16.5, 24.5}};
  std::vector<uint8_t> flags;
  Var emb = head.embed(c4, boxes, 16, &flags);
  REQUIRE(flags.size() == 2);
  CHECK(flags[0] == 0);
  CHECK(flags[1] == 1);
  CHECK(emb->value.mat().row(1).norm() == 0.0);
  CHECK(emb->value.mat().row(0).norm() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("roi embedding gradients reach the shared map and the head") {
  ParamStore ps;
  std::mt19937_64 rng(19);
  RoiEmbedHead head = RoiEmbedHead::create(ps, "roi", 4, 6, 5, rng);
  Var c4 = leaf(tt::randn({4, 6, 6}, 20));
  std::vector<BoxF> boxes{{4, 6, 50, 80}, {30, 20, 90, 90}};
  auto fwd = [&] { return mean_vec(head.embed(c4, boxes)); };
  CHECK(tt::grad_check(fwd, {c4, head.proj().w}, 1e-5, 40, 21) < 1e-4);
}

TEST_CASE("fused embeddings halve-average the cosines") {
  // e_align == e_roi: fused cosine equals the single-branch cosine.
  Tensord a = tt::randn({2, 6}, 31);
  for (int r = 0; r < 2; ++r) a.mat().row(r).normalize();
  Var va = leaf(a, false);
  Var fused_same = fuse_embeddings(va, va);
  const double cos_align = a.mat().row(0).dot(a.mat().row(1));
  const double cos_fused =
      fused_same->value.mat().row(0).dot(fused_same->value.mat().row(1));
  CHECK(cos_fused == doctest::Approx(cos_align).epsilon(1e-9));
  for (int r = 0; r < 2; ++r)
    CHECK(fused_same->value.mat().row(r).norm() == doctest::Approx(1.0).epsilon(1e-9));

  // Identical align halves, orthogonal roi halves -> fused cosine 0.5.
  Tensord e1({1, 2}), e2({1, 2}), r1({1, 2}), r2({1, 2});
  e1(0, 0) = 1;
  e2(0, 0) = 1;
  r1(0, 0) = 1;
  r2(0, 1) = 1;
  Var fa = fuse_embeddings(leaf(e1, false), leaf(r1, false));
  Var fb = fuse_embeddings(leaf(e2, false), leaf(r2, false));
  CHECK(fa->value.mat().row(0).dot(fb->value.mat().row(0)) ==
        doctest::Approx(0.5).epsilon(1e-12));

  // Random unit halves: fused cosine = (cosA + cosR) / 2.
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    Tensord xa = Tensord::randn({2, 5}, rng), xr = Tensord::randn({2, 5}, rng);
    for (int r = 0; r < 2; ++r) {
      xa.mat().row(r).normalize();
      xr.mat().row(r).normalize();
    }
    Var f = fuse_embeddings(leaf(xa, false), leaf(xr, false));
    const double expect = 0.5 * (xa.mat().row(0).dot(xa.mat().row(1)) +
                                 xr.mat().row(0).dot(xr.mat().row(1)));
    CHECK(std::abs(f->value.mat().row(0).dot(f->value.mat().row(1)) - expect) <= 1e-9);
  }

  Var bad = leaf(tt::randn({3, 6}, 33), false);
  CHECK_THROWS_AS(fuse_embeddings(va, bad), std::invalid_argument);
}
