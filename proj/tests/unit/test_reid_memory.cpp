#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <deque>

#include "alignps/reid_memory.hpp"
#include "testing.hpp"

using namespace alignps;
namespace tt = alignps::testing;

namespace {

ReidMemory make_memory(int l, int d, uint64_t seed = 1, int q = 64, double tau = 0.1,
                       double momentum = 0.5) {
  ReidMemoryConfig cfg;
  cfg.num_ids = l;
  cfg.d = d;
  cfg.queue_size = q;
  cfg.temperature = tau;
  cfg.momentum = momentum;
  std::mt19937_64 rng(seed);
  return ReidMemory(cfg, rng);
}

Tensord unit_rows(std::vector<std::vector<double>> rows) {
  Tensord t({static_cast<int>(rows.size()), static_cast<int>(rows[0].size())});
  for (size_t r = 0; r < rows.size(); ++r) {
    Eigen::VectorXd v(rows[r].size());
    for (size_t c = 0; c < rows[r].size(); ++c) v[static_cast<Eigen::Index>(c)] = rows[r][c];
    v.normalize();
    t.mat().row(static_cast<Eigen::Index>(r)) = v.transpose();
  }
  return t;
}

// Brute-force pair-combination triplet oracle.
double triplet_oracle(const Tensord& emb, const std::vector<int>& ids, const ReidMemory& mem,
                      const TripletConfig& cfg) {
  std::vector<Eigen::VectorXd> vecs;
  std::vector<int> sets;
  std::map<int, int> set_of;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0) continue;
    if (!set_of.count(ids[i])) set_of[ids[i]] = static_cast<int>(set_of.size());
    vecs.emplace_back(emb.mat().row(static_cast<Eigen::Index>(i)).transpose());
    sets.push_back(set_of[ids[i]]);
  }
  if (set_of.size() < 2) return 0.0;
  if (cfg.use_lut_anchors)
    for (auto [id, s] : set_of) {
      vecs.emplace_back(mem.lut().mat().row(id).transpose());
      sets.push_back(s);
    }
  std::vector<double> pos, neg;
  for (size_t a = 0; a < vecs.size(); ++a)
    for (size_t b = a + 1; b < vecs.size(); ++b)
      (sets[a] == sets[b] ? pos : neg).push_back((vecs[a] - vecs[b]).norm());
  if (pos.empty() || neg.empty()) return 0.0;
  double total = 0.0;
  for (double dp : pos)
    for (double dn : neg) total += std::max(0.0, cfg.margin + dp - dn);
  return total / (pos.size() * neg.size());
}

}  // namespace

TEST_CASE("single-entry memory gives probability one") {
  auto mem = make_memory(1, 4);
  Var x = leaf(Tensord(mem.lut()), false);
  Var p = oim_probabilities(x, mem);
  CHECK(p->value(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("large temperature flattens the distribution") {
  auto mem = make_memory(3, 6, 2, 64, 1e6);
  Tensord u({5, 6});
  std::mt19937_64 rng(3);
  u = Tensord::randn({5, 6}, rng);
  for (int i = 0; i < 5; ++i) u.mat().row(i).normalize();
  mem.update(u, {kUnlabeled, kUnlabeled, -1, 0, 1});  // push two into the queue

  Var x = leaf(tt::randn({1, 6}, 4), false);
  Var p = oim_probabilities(rows_normalize(x), mem);
  REQUIRE(p->value.dim(1) == 3 + 3);  // three unlabeled pushes above
  for (int c = 0; c < p->value.dim(1); ++c)
    CHECK(p->value(0, c) == doctest::Approx(1.0 / 6.0).epsilon(1e-6));
}

TEST_CASE("probabilities match the scalar softmax oracle") {
  // L=2, |U|=1, x = v1, v2 and u1 orthogonal to x, tau=0.1.
  auto mem = make_memory(2, 4, 5);
  Tensord lut = unit_rows({{1, 0, 0, 0}, {0, 1, 0, 0}});
  Tensord queue = unit_rows({{0, 0, 1, 0}});
  mem.set_state(lut, queue, 1);

  Var x = leaf(unit_rows({{1, 0, 0, 0}}), false);
  Var p = oim_probabilities(x, mem);
  const double e10 = std::exp(10.0);
  CHECK(p->value(0, 0) == doctest::Approx(e10 / (e10 + 2.0)).epsilon(1e-10));

  double sum = 0.0;
  for (int c = 0; c < 3; ++c) {
    sum += p->value(0, c);
    CHECK(p->value(0, c) > 0.0);
    CHECK(p->value(0, c) < 1.0);
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("oim loss is zero at p_t = 1 and equals plain OIM when gamma_f = 0") {
  auto mem = make_memory(2, 4, 6);
  Tensord lut = unit_rows({{1, 0, 0, 0}, {0, 1, 0, 0}});
  mem.set_state(lut, Tensord({0, 4}), 0);

  Var saturated = leaf(unit_rows({{1, 0, 0, 0}}), false);
  // With tau=0.1 and orthogonal distractors the target probability is ~1.
  Var l = oim_loss(saturated, {0}, mem);
  CHECK(l->value[0] < 1e-4);

  Var x = leaf(tt::randn({3, 4}, 7));
  Var plain = oim_loss(rows_normalize(x), {0, 1, 0}, mem, false);
  Var focal0 = oim_loss(rows_normalize(x), {0, 1, 0}, mem, true, 0.0);
  CHECK(plain->value[0] == doctest::Approx(focal0->value[0]).epsilon(1e-12));
}

TEST_CASE("zero labeled samples give zero loss with zero gradient") {
  auto mem = make_memory(2, 4, 8);
  Var x = leaf(tt::randn({2, 4}, 9));
  Var l = oim_loss(x, {kUnlabeled, kUnlabeled}, mem);
  CHECK(l->value[0] == 0.0);
  CHECK_FALSE(l->requires_grad);
}

TEST_CASE("oim loss gradients match finite differences (L=5, U=3, B=4)") {
  for (uint64_t seed : {11u, 12u, 13u, 14u, 15u}) {
    auto mem = make_memory(5, 6, seed);
    std::mt19937_64 rng(seed + 50);
    Tensord pushes = Tensord::randn({3, 6}, rng);
    for (int i = 0; i < 3; ++i) pushes.mat().row(i).normalize();
    mem.update(pushes, {kUnlabeled, kUnlabeled, kUnlabeled});
    REQUIRE(mem.queue_count() == 3);

    Var x = leaf(tt::randn({4, 6}, seed + 100));
    for (bool focal : {false, true}) {
      auto fwd = [&] {
        return oim_loss(rows_normalize(x), {0, 3, kUnlabeled, 2}, mem, focal, 2.0);
      };
      CHECK(tt::grad_check(fwd, {x}, 1e-6, -1, seed) < 1e-4);
    }
  }
}

TEST_CASE("memory is constant under the loss (no gradient into V or U)") {
  auto mem = make_memory(3, 4, 16);
  Tensord lut_before = mem.lut();
  Var x = leaf(tt::randn({2, 4}, 17));
  Var l = toim_loss(rows_normalize(x), {0, 1}, mem, TripletConfig{});
  backward(l);
  CHECK((mem.lut().array() - lut_before.array()).abs().maxCoeff() == 0.0);
  // The only parents on the tape are the embeddings.
  CHECK(x->grad.array().abs().maxCoeff() > 0.0);
}

TEST_CASE("memory update: momentum one keeps the LUT fixed") {
  auto mem = make_memory(2, 4, 18, 64, 0.1, 1.0);
  Tensord before = mem.lut();
  Var x = leaf(tt::randn({2, 4}, 19), false);
  mem.update(x->value, {0, 1});
  CHECK((mem.lut().array() - before.array()).abs().maxCoeff() == 0.0);
}

TEST_CASE("memory update: circular queue keeps the last Q entries in FIFO order") {
  auto mem = make_memory(2, 4, 20, 2);
  Tensord pushes = unit_rows({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}});
  mem.update(pushes, {kUnlabeled, kUnlabeled, kUnlabeled});
  REQUIRE(mem.queue_count() == 2);
  Tensord q = mem.queue_matrix();
  CHECK(q(0, 1) == doctest::Approx(1.0));  // oldest surviving = second push
  CHECK(q(1, 2) == doctest::Approx(1.0));
}

TEST_CASE("memory update against a reference ring buffer over 1000 random steps") {
  auto mem = make_memory(6, 5, 21, 16);
  std::deque<Eigen::VectorXd> ref;
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<int> id_dist(-1, 5);
  for (int step = 0; step < 1000; ++step) {
    const int bsz = 1 + static_cast<int>(rng() % 4);
    Tensord emb = Tensord::randn({bsz, 5}, rng);
    std::vector<int> ids;
    for (int i = 0; i < bsz; ++i) {
      emb.mat().row(i).normalize();
      ids.push_back(id_dist(rng));
    }
    mem.update(emb, ids);
    for (int i = 0; i < bsz; ++i)
      if (ids[i] == kUnlabeled) {
        ref.emplace_back(emb.mat().row(i).transpose());
        if (ref.size() > 16) ref.pop_front();
      }
  }
  REQUIRE(mem.queue_count() == static_cast<int>(ref.size()));
  Tensord q = mem.queue_matrix();
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK((q.mat().row(static_cast<Eigen::Index>(i)).transpose() - ref[i]).norm() < 1e-12);

  // All rows stay unit norm.
  for (int i = 0; i < mem.num_ids(); ++i)
    CHECK(mem.lut().mat().row(i).norm() == doctest::Approx(1.0).epsilon(1e-5));
  for (int i = 0; i < mem.queue_count(); ++i)
    CHECK(q.mat().row(i).norm() == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("memory update normalization matches the hand-computed example") {
  auto mem = make_memory(1, 2, 23, 4, 0.1, 0.5);
  mem.set_state(unit_rows({{1, 0}}), Tensord({0, 2}), 0);
  Tensord x = unit_rows({{0, 1}});
  mem.update(x, {0});
  const double s = std::sqrt(2.0) / 2.0;
  CHECK(mem.lut()(0, 0) == doctest::Approx(s).epsilon(1e-12));
  CHECK(mem.lut()(0, 1) == doctest::Approx(s).epsilon(1e-12));
}

TEST_CASE("triplet loss trivial cases") {
  auto mem = make_memory(4, 6, 24);
  TripletConfig cfg;

  // Identical same-id embeddings, far cross-id pairs -> margin satisfied.
  {
    cfg.use_lut_anchors = false;
    Tensord e = unit_rows({{1, 0, 0, 0, 0, 0},
                           {1, 0, 0, 0, 0, 0},
                           {0, 0, 0, 1, 0, 0},
                           {0, 0, 0, 1, 0, 0}});
    Var x = leaf(e, false);
    Var l = toim_triplet_loss(x, {0, 0, 1, 1}, mem, cfg);
    CHECK(l->value[0] == 0.0);  // D_pos = 0, D_neg = sqrt(2) > M
  }
  // Two ids, one embedding each, no LUT anchors: no positive pairs.
  {
    cfg.use_lut_anchors = false;
    Var x = leaf(unit_rows({{1, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0}}), false);
    Var l = toim_triplet_loss(x, {0, 1}, mem, cfg);
    CHECK(l->value[0] == 0.0);
    CHECK_FALSE(l->requires_grad);
  }
  // Fewer than two identities.
  {
    Var x = leaf(unit_rows({{1, 0, 0, 0, 0, 0}}), false);
    CHECK(toim_triplet_loss(x, {2}, mem, TripletConfig{})->value[0] == 0.0);
  }
}

TEST_CASE("triplet loss equals brute-force pair enumeration") {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 10; ++trial) {
    auto mem = make_memory(5, 6, 26 + static_cast<uint64_t>(trial));
    Tensord e = Tensord::randn({4, 6}, rng);
    for (int i = 0; i < 4; ++i) e.mat().row(i).normalize();
    std::vector<int> ids{0, 0, 3, 3};
    for (bool lut : {false, true}) {
      TripletConfig cfg;
      cfg.use_lut_anchors = lut;
      Var x = leaf(e, false);
      Var l = toim_triplet_loss(x, ids, mem, cfg);
      CHECK(std::abs(l->value[0] - triplet_oracle(e, ids, mem, cfg)) <= 1e-9);
    }
  }
}

TEST_CASE("triplet loss is invariant under identity relabeling") {
  auto mem = make_memory(6, 5, 30);
  Tensord e = tt::randn({6, 5}, 31);
  for (int i = 0; i < 6; ++i) e.mat().row(i).normalize();
  TripletConfig cfg;
  cfg.use_lut_anchors = false;  // LUT entries are label-specific
  Var x = leaf(e, false);
  const double a = toim_triplet_loss(x, {0, 0, 1, 1, 2, 2}, mem, cfg)->value[0];
  const double b = toim_triplet_loss(x, {4, 4, 2, 2, 5, 5}, mem, cfg)->value[0];
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("triplet gradients match finite differences") {
  for (uint64_t seed : {41u, 42u, 43u}) {
    auto mem = make_memory(4, 5, seed);
    Var x = leaf(tt::randn({4, 5}, seed + 10));
    TripletConfig cfg;
    auto fwd = [&] { return toim_triplet_loss(rows_normalize(x), {0, 0, 2, 2}, mem, cfg); };
    CHECK(tt::grad_check(fwd, {x}, 1e-6, -1, seed) < 1e-4);
  }
}

TEST_CASE("hinge monotonicity: widening negatives cannot increase the loss") {
  auto mem = make_memory(4, 4, 50);
  TripletConfig cfg;
  cfg.use_lut_anchors = false;
  Tensord e = unit_rows({{1, 0.2, 0, 0}, {1, 0, 0.2, 0}, {0.4, 1, 0, 0}, {0.4, 1, 0.1, 0}});
  Var x0 = leaf(e, false);
  const double base = toim_triplet_loss(x0, {0, 0, 1, 1}, mem, cfg)->value[0];

  // Push the second set further away (increases D_neg, D_pos unchanged).
  Tensord far = e;
  far.mat().row(2) = unit_rows({{-1, 0.5, 0, 0}}).mat().row(0);
  far.mat().row(3) = unit_rows({{-1, 0.5, 0.1, 0}}).mat().row(0);
  const double pushed = toim_triplet_loss(leaf(far, false), {0, 0, 1, 1}, mem, cfg)->value[0];
  CHECK(pushed <= base + 1e-12);

  // Spread a positive pair (increases D_pos): loss cannot decrease.
  Tensord spread = e;
  spread.mat().row(1) = unit_rows({{0.8, 0, 0.6, 0}}).mat().row(0);
  const double spread_loss =
      toim_triplet_loss(leaf(spread, false), {0, 0, 1, 1}, mem, cfg)->value[0];
  CHECK(spread_loss >= base - 1e-12);
}

TEST_CASE("TOIM is exactly triplet plus OIM") {
  auto mem = make_memory(4, 5, 60);
  Var x = leaf(tt::randn({4, 5}, 61));
  Var xn = rows_normalize(x);
  std::vector<int> ids{0, 0, 1, 1};
  TripletConfig cfg;
  Var tri = toim_triplet_loss(xn, ids, mem, cfg);
  Var oim = oim_loss(xn, ids, mem);
  Var toim = toim_loss(xn, ids, mem, cfg);
  CHECK(toim->value[0] == doctest::Approx(tri->value[0] + oim->value[0]).epsilon(1e-12));
  CHECK(tri->value[0] > 0.0);
  CHECK(oim->value[0] > 0.0);

  // Gradient of the sum is the sum of gradients (finite differences).
  auto fwd = [&] { return toim_loss(rows_normalize(x), ids, mem, cfg); };
  CHECK(tt::grad_check(fwd, {x}, 1e-6, -1, 62) < 1e-4);

  // Triplet inactive -> TOIM == OIM.
  Tensord tight = unit_rows({{1, 0, 0, 0, 0}, {1, 0, 0, 0, 0}, {0, 1, 0, 0, 0}, {0, 1, 0, 0, 0}});
  TripletConfig noanchor = cfg;
  noanchor.use_lut_anchors = false;
  Var xt = leaf(tight, false);
  CHECK(toim_triplet_loss(xt, ids, mem, noanchor)->value[0] == 0.0);
  CHECK(toim_loss(xt, ids, mem, noanchor)->value[0] ==
        doctest::Approx(oim_loss(xt, ids, mem)->value[0]).epsilon(1e-12));
}

TEST_CASE("oim_probabilities sums to one for random memories and inputs") {
  std::mt19937_64 rng(70);
  for (int trial = 0; trial < 20; ++trial) {
    const int l = 1 + static_cast<int>(rng() % 6);
    auto mem = make_memory(l, 5, 71 + static_cast<uint64_t>(trial));
    const int pushes = static_cast<int>(rng() % 4);
    if (pushes > 0) {
      Tensord u = Tensord::randn({pushes, 5}, rng);
      for (int i = 0; i < pushes; ++i) u.mat().row(i).normalize();
      mem.update(u, std::vector<int>(static_cast<size_t>(pushes), kUnlabeled));
    }
    Var x = rows_normalize(leaf(Tensord::randn({3, 5}, rng), false));
    Var p = oim_probabilities(x, mem);
    for (int b = 0; b < 3; ++b) {
      double sum = 0.0;
      for (int c = 0; c < p->value.dim(1); ++c) {
        sum += p->value(b, c);
        CHECK(p->value(b, c) > 0.0);
        CHECK(p->value(b, c) < 1.0);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}
