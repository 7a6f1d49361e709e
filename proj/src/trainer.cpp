#include "alignps/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "alignps/synth_data.hpp"

namespace fs = std::filesystem;

namespace alignps {

namespace {

const std::vector<std::string> kLossColumns = {
    "total", "det_cls", "det_reg", "det_ctr", "reid",
    "rpn_obj", "rpn_delta", "roi_reid", "mi", "kl", "dv"};

SceneSample resize_scene(const SceneSample& scene, int long_side) {
  const int w = scene.image.width, h = scene.image.height;
  const double s = static_cast<double>(long_side) / std::max(w, h);
  int nw = std::max(32, static_cast<int>(std::lround(w * s / 32.0)) * 32);
  int nh = std::max(32, static_cast<int>(std::lround(h * s / 32.0)) * 32);
  SceneSample out;
  out.scene_id = scene.scene_id;
  out.image = ImageU8::filled(nw, nh);
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x) {
      const int sy = std::min(h - 1, static_cast<int>(y * static_cast<double>(h) / nh));
      const int sx = std::min(w - 1, static_cast<int>(x * static_cast<double>(w) / nw));
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = scene.image.at(sy, sx, c);
    }
  const double fx = static_cast<double>(nw) / w, fy = static_cast<double>(nh) / h;
  for (const auto& p : scene.persons)
    out.persons.push_back(
        {BoxF{p.box.x1 * fx, p.box.y1 * fy, p.box.x2 * fx, p.box.y2 * fy}, p.identity});
  return out;
}

}  // namespace

int Trainer::count_identities(const SearchSplit& split) {
  int max_id = -1;
  for (const auto& scene : split.train)
    for (const auto& p : scene.persons) max_id = std::max(max_id, p.identity);
  return max_id + 1;
}

Trainer::Trainer(const RunConfig& cfg, const SearchSplit& split) : cfg_(cfg), split_(&split) {
  const int num_ids = count_identities(split);
  if (num_ids < 1) throw std::invalid_argument("Trainer: dataset has no labeled identities");
  model_ = std::make_unique<PersonSearchModel>(cfg_, num_ids);
  cfg_ = model_->config();  // level ranges resolved per level count
}

double Trainer::lr_scale(long step, int epoch) const {
  double s = 1.0;
  if (cfg_.schedule.warmup_steps > 0 && step < cfg_.schedule.warmup_steps)
    s *= static_cast<double>(step + 1) / cfg_.schedule.warmup_steps;
  for (int de : cfg_.schedule.decay_epochs)
    if (epoch >= de) s *= cfg_.schedule.decay_factor;
  return s;
}

TrainSummary Trainer::run() {
  TrainSummary summary;
  const bool has_run_dir = !cfg_.run_dir.empty();
  std::ofstream loss_log;
  if (has_run_dir) {
    fs::create_directories(cfg_.run_dir);
    std::ofstream cf(fs::path(cfg_.run_dir) / "config.toml");
    cf << config_to_toml(cfg_);
    std::string hash = "unknown";
    if (!cfg_.data_dir.empty() && fs::exists(cfg_.data_dir))
      hash = dataset_content_hash(cfg_.data_dir);
    std::ofstream hf(fs::path(cfg_.run_dir) / "dataset_hash.txt");
    hf << hash << "\n";
    loss_log.open(fs::path(cfg_.run_dir) / "losses.csv");
    loss_log << "step,epoch,lr";
    for (const auto& c : kLossColumns) loss_log << "," << c;
    loss_log << "\n";
  }

  std::mt19937_64 rng(cfg_.seed);
  SgdOptimizer opt(model_->params(), cfg_.optimizer);

  std::vector<int> order(split_->train.size());
  std::iota(order.begin(), order.end(), 0);

  long step = 0;
  for (int epoch = 0; epoch < cfg_.schedule.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg_.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg_.batch_size));
      opt.zero_grad();
      if (cfg_.reid_warmup_steps > 0)
        model_->set_reid_scale(std::min(1.0, static_cast<double>(step + 1) / cfg_.reid_warmup_steps));

      std::vector<SceneLosses> batch;
      std::vector<Var> totals;
      std::vector<std::string> scene_ids;
      for (size_t i = start; i < end; ++i) {
        const SceneSample& base = split_->train[static_cast<size_t>(order[i])];
        scene_ids.push_back(base.scene_id);
        if (cfg_.multiscale) {
          std::uniform_int_distribution<int> side(cfg_.ms_min, cfg_.ms_max);
          batch.push_back(model_->train_forward(resize_scene(base, side(rng))));
        } else {
          batch.push_back(model_->train_forward(base));
        }
        totals.push_back(batch.back().total);
      }
      std::vector<Var> step_terms{
          weighted_sum(totals, std::vector<double>(totals.size(), 1.0 / totals.size()))};
      std::vector<double> step_weights{1.0};
      std::map<std::string, double> batch_components;
      model_->append_mutual_losses(batch, &step_terms, &step_weights, &batch_components);
      Var loss = weighted_sum(step_terms, step_weights);

      if (!std::isfinite(loss->value[0])) {
        if (has_run_dir) {
          nlohmann::json dump;
          dump["step"] = step;
          dump["epoch"] = epoch;
          dump["scenes"] = scene_ids;
          for (size_t i = 0; i < batch.size(); ++i)
            dump["losses"][scene_ids[i]] = batch[i].components;
          std::ofstream df(fs::path(cfg_.run_dir) / "nan_dump.json");
          df << dump.dump(2) << "\n";
        }
        throw std::runtime_error("training aborted: non-finite loss at step " +
                                 std::to_string(step) + " (diagnostic dump written)");
      }

      backward(loss);
      const double scale = lr_scale(step, epoch);
      opt.step(scale);
      model_->apply_memory_updates(batch);

      if (cfg_.debug_probe) {
        const double diff = model_->deform_probe_max_diff();
        if (diff > 1e-6)
          throw std::runtime_error("debug probe: zero-offset deformable conv deviates from "
                                   "standard conv by " + std::to_string(diff));
      }

      StepLog log;
      log.step = step;
      log.epoch = epoch;
      log.lr = cfg_.optimizer.lr * scale;
      for (const auto& col : kLossColumns) {
        double acc = 0.0;
        int cnt = 0;
        for (const auto& b : batch) {
          const auto it = b.components.find(col);
          if (it != b.components.end()) {
            acc += it->second;
            ++cnt;
          }
        }
        log.losses[col] = cnt > 0 ? acc / cnt : 0.0;
      }
      for (const auto& [k, v] : batch_components) log.losses[k] = v;
      log.losses["total"] = loss->value[0];
      if (has_run_dir) {
        loss_log << step << "," << epoch << "," << log.lr;
        for (const auto& col : kLossColumns) loss_log << "," << log.losses[col];
        loss_log << "\n";
      }
      summary.history.push_back(std::move(log));
      ++step;
    }

    if (has_run_dir) {
      std::ostringstream rs;
      rs << rng;
      TrainState state{epoch, step, rs.str(), ""};
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%03d.ckpt", epoch);
      save_checkpoint_file((fs::path(cfg_.run_dir) / name).string(),
                           snapshot_training(*model_, opt, state));
    }
  }

  summary.steps = step;
  if (has_run_dir) {
    std::ostringstream rs;
    rs << rng;
    std::string hash;
    {
      std::ifstream hf(fs::path(cfg_.run_dir) / "dataset_hash.txt");
      std::getline(hf, hash);
    }
    TrainState state{cfg_.schedule.epochs, step, rs.str(), hash};
    summary.final_checkpoint = (fs::path(cfg_.run_dir) / "checkpoint_final.ckpt").string();
    save_checkpoint_file(summary.final_checkpoint, snapshot_training(*model_, opt, state));
  }
  return summary;
}

EvalResult evaluate_split(PersonSearchModel& model, const SearchSplit& split,
                          EmbeddingSource src,
                          std::map<std::string, SceneDetections>* out_dets) {
  std::map<std::string, SceneDetections> dets;
  for (const auto& scene : split.train) dets[scene.scene_id] = model.infer_scene(scene, src);

  QueryEmbeddingFn qfn;
  qfn.fn = [&model, &split, src](const std::string& scene_id, const BoxF& box) {
    const int idx = split.scene_index(scene_id);
    if (idx < 0) throw std::runtime_error("evaluate: unknown query scene " + scene_id);
    return model.query_embedding(split.train[static_cast<size_t>(idx)], box, src);
  };

  EvalResult out;
  out.detection = detection_metrics(dets, split.train);
  out.search = search_map(split, dets, qfn);
  if (out_dets) *out_dets = std::move(dets);
  return out;
}

}  // namespace alignps
