#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "alignps/trainer.hpp"
#include "testing.hpp"

using namespace alignps;
namespace fs = std::filesystem;

namespace {

RunConfig toy_config(ModelPreset preset, uint64_t seed = 3) {
  RunConfig cfg;
  apply_preset(cfg, preset);
  cfg.backbone.channels = {8, 8, 16, 16};
  cfg.backbone.gn_groups = 4;
  cfg.afa.d = 16;
  cfg.fcos.tower_convs = 1;
  cfg.fcos.gn_groups = 4;
  cfg.mutual.mine_hidden = 32;
  cfg.queue_size = 8;
  cfg.batch_size = 2;
  cfg.schedule.epochs = 1;
  cfg.schedule.warmup_steps = 2;
  cfg.schedule.decay_epochs = {};
  cfg.optimizer.lr = 0.005;
  cfg.rpn.anchor_base = 20.0;
  cfg.seed = seed;
  return cfg;
}

SearchSplit toy_split(uint64_t seed = 5, int n_scenes = 6) {
  GeneratorConfig g;
  g.n_scenes = n_scenes;
  g.n_ids = 3;
  g.persons_min = 2;
  g.persons_max = 2;
  g.image_h = 64;
  g.image_w = 64;
  g.scale_jitter = 0.2;
  g.gallery_size = 4;
  g.seed = seed;
  return generate_dataset(g);
}

}  // namespace

TEST_CASE("single training step: finite losses and no dead AFA parameters") {
  for (ModelPreset preset : {ModelPreset::kAlignPs, ModelPreset::kRoiAlignPs}) {
    RunConfig cfg = toy_config(preset);
    cfg.mutual.kl = cfg.mutual.dv = (preset == ModelPreset::kRoiAlignPs);
    SearchSplit split = toy_split();
    PersonSearchModel model(cfg, Trainer::count_identities(split));

    model.params().zero_grads();
    std::vector<SceneLosses> batch;
    std::vector<Var> totals;
    for (int i = 0; i < 2; ++i) {
      batch.push_back(model.train_forward(split.train[static_cast<size_t>(i)]));
      totals.push_back(batch.back().total);
      for (const auto& [name, v] : batch.back().components) {
        INFO(name);
        CHECK(std::isfinite(v));
      }
    }
    Var loss = weighted_sum(totals, {0.5, 0.5});
    backward(loss);

    int dead = 0;
    for (const auto& [name, var] : model.params().items()) {
      if (name.rfind("afa.", 0) != 0) continue;
      if (var->grad.array().abs().maxCoeff() == 0.0) {
        ++dead;
        MESSAGE("dead AFA parameter: ", name);
      }
    }
    CHECK(dead == 0);
    model.apply_memory_updates(batch);
  }
}

TEST_CASE("training is deterministic in the seed") {
  auto run_once = [] {
    RunConfig cfg = toy_config(ModelPreset::kAlignPs, 11);
    SearchSplit split = toy_split(7);
    Trainer t(cfg, split);
    return t.run();
  };
  TrainSummary a = run_once();
  TrainSummary b = run_once();
  REQUIRE(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i)
    CHECK(a.history[i].losses.at("total") == b.history[i].losses.at("total"));
}

TEST_CASE("checkpoints rebuild the exact model") {
  RunConfig cfg = toy_config(ModelPreset::kRoiAlignPs, 13);
  auto dir = fs::temp_directory_path() / "alignps_ckpt_test";
  fs::remove_all(dir);
  cfg.run_dir = (dir / "run").string();
  SearchSplit split = toy_split(9);
  Trainer t(cfg, split);
  TrainSummary s = t.run();
  REQUIRE(!s.final_checkpoint.empty());

  auto loaded = load_model_checkpoint(s.final_checkpoint);
  CHECK(loaded.cfg.preset == ModelPreset::kRoiAlignPs);
  for (const auto& [name, var] : t.model().params().items()) {
    Var lv = loaded.model->params().find(name);
    REQUIRE(lv != nullptr);
    CHECK((lv->value.array() - var->value.array()).abs().maxCoeff() == 0.0);
  }
  // Memory banks restored exactly.
  CHECK((loaded.model->memory_align().lut().array() -
         t.model().memory_align().lut().array())
            .abs()
            .maxCoeff() == 0.0);
  CHECK(loaded.model->memory_align().queue_count() == t.model().memory_align().queue_count());

  // Identical inference.
  SceneDetections da = t.model().infer_scene(split.train[0]);
  SceneDetections db = loaded.model->infer_scene(split.train[0]);
  REQUIRE(da.boxes.size() == db.boxes.size());
  for (size_t i = 0; i < da.boxes.size(); ++i) {
    CHECK(da.scores[i] == db.scores[i]);
    CHECK(da.boxes[i].x1 == db.boxes[i].x1);
  }
  fs::remove_all(dir);
}

TEST_CASE("corrupted checkpoints produce schema errors") {
  RunConfig cfg = toy_config(ModelPreset::kAlignPs, 17);
  auto dir = fs::temp_directory_path() / "alignps_ckpt_bad";
  fs::remove_all(dir);
  fs::create_directories(dir);
  SearchSplit split = toy_split(11, 4);
  PersonSearchModel model(cfg, Trainer::count_identities(split));
  SgdOptimizer opt(model.params(), cfg.optimizer);
  CheckpointData data = snapshot_training(model, opt, TrainState{});
  data.tensors.erase("param/backbone.stem.conv.w");
  const std::string path = (dir / "bad.ckpt").string();
  save_checkpoint_file(path, data);
  CHECK_THROWS_WITH_AS(load_model_checkpoint(path),
                       doctest::Contains("checkpoint/config mismatch"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("anchor-free inference constructs no anchors; the forced path does") {
  RunConfig cfg = toy_config(ModelPreset::kRoiAlignPs, 19);
  SearchSplit split = toy_split(13, 4);
  PersonSearchModel model(cfg, Trainer::count_identities(split));

  const long before = model.anchors_built();
  SceneDetections det = model.infer_scene(split.train[0]);
  CHECK(model.anchors_built() == before);

  (void)model.infer_scene_forced_rpn(split.train[0]);
  CHECK(model.anchors_built() > before);

  // Fused embeddings are unit rows of twice the branch dimension.
  if (!det.boxes.empty()) {
    CHECK(det.embeddings.dim(1) == 2 * cfg.afa.d);
    for (int r = 0; r < det.embeddings.dim(0); ++r)
      CHECK(det.embeddings.mat().row(r).norm() == doctest::Approx(1.0).epsilon(1e-6));
  }

  // Repeated inference is identical.
  SceneDetections det2 = model.infer_scene(split.train[0]);
  REQUIRE(det.boxes.size() == det2.boxes.size());
  for (size_t i = 0; i < det.boxes.size(); ++i) CHECK(det.scores[i] == det2.scores[i]);
}

TEST_CASE("query embeddings expose every source on the two-branch model") {
  RunConfig cfg = toy_config(ModelPreset::kRoiAlignPs, 23);
  SearchSplit split = toy_split(15, 4);
  PersonSearchModel model(cfg, Trainer::count_identities(split));
  const auto& scene = split.train[0];
  REQUIRE(!scene.persons.empty());
  const BoxF box = scene.persons[0].box;

  auto fused = model.query_embedding(scene, box, EmbeddingSource::kFused);
  auto align = model.query_embedding(scene, box, EmbeddingSource::kAlignOnly);
  auto roi = model.query_embedding(scene, box, EmbeddingSource::kRoiOnly);
  CHECK(fused.size() == 2 * cfg.afa.d);
  CHECK(align.size() == cfg.afa.d);
  CHECK(roi.size() == cfg.afa.d);
  CHECK(fused.norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(align.norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(roi.norm() == doctest::Approx(1.0).epsilon(1e-6));
  // The fused vector is the renormalized concatenation of the halves.
  for (int i = 0; i < cfg.afa.d; ++i)
    CHECK(fused[i] == doctest::Approx(align[i] / std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("non-finite losses abort with a diagnostic dump") {
  RunConfig cfg = toy_config(ModelPreset::kAlignPs, 29);
  auto dir = fs::temp_directory_path() / "alignps_nan_test";
  fs::remove_all(dir);
  cfg.run_dir = (dir / "run").string();
  SearchSplit split = toy_split(17, 4);
  Trainer t(cfg, split);
  // Poison a parameter so the first forward produces NaN.
  t.model().params().items()[0].second->value[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(t.run(), std::runtime_error);
  CHECK(fs::exists(fs::path(cfg.run_dir) / "nan_dump.json"));
  fs::remove_all(dir);
}

TEST_CASE("debug probe confirms zero-offset equivalence on the live model") {
  RunConfig cfg = toy_config(ModelPreset::kAlignPs, 31);
  SearchSplit split = toy_split(19, 4);
  PersonSearchModel model(cfg, Trainer::count_identities(split));
  CHECK(model.deform_probe_max_diff() <= 1e-6);
}

TEST_CASE("evaluate_split runs end to end on an untrained model") {
  RunConfig cfg = toy_config(ModelPreset::kAlignPs, 37);
  SearchSplit split = toy_split(21, 6);
  PersonSearchModel model(cfg, Trainer::count_identities(split));
  EvalResult r = evaluate_split(model, split);
  CHECK(r.detection.recall >= 0.0);
  CHECK(r.detection.recall <= 1.0);
  CHECK(r.search.map >= 0.0);
  CHECK(r.search.map <= 1.0);
  CHECK(r.search.n_queries > 0);
}
