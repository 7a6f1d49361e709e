// Command-line front end: dataset generation, training, evaluation,
// inference, gallery sweeps and plotting.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "alignps/detections_io.hpp"
#include "alignps/plot.hpp"
#include "alignps/trainer.hpp"

using namespace alignps;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonTrainOpts {
  std::string preset = "alignps";
  std::string config_file;
  std::vector<std::string> sets;
  std::string data_dir;
  std::string run_dir;
  uint64_t seed = 0;
  bool seed_given = false;
};

RunConfig resolve_config(const CommonTrainOpts& o) {
  RunConfig cfg;
  apply_preset(cfg, preset_from_string(o.preset));
  if (!o.config_file.empty()) load_config_toml(cfg, o.config_file);
  if (!o.data_dir.empty()) cfg.data_dir = o.data_dir;
  if (!o.run_dir.empty()) cfg.run_dir = o.run_dir;
  if (o.seed_given) cfg.seed = o.seed;
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    apply_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

json metrics_to_json(const EvalResult& r, const std::string& source) {
  return json{{"detection",
               {{"recall", r.detection.recall},
                {"ap", r.detection.ap},
                {"n_gt", r.detection.n_gt},
                {"n_det", r.detection.n_det}}},
              {"search",
               {{"mAP", r.search.map},
                {"top1", r.search.top1},
                {"queries", r.search.n_queries},
                {"excluded", r.search.n_excluded}}},
              {"embedding_source", source}};
}

void write_json(const std::string& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << "\n";
}

std::vector<QueryEmbeddingRecord> export_query_records(PersonSearchModel& model,
                                                       const SearchSplit& split,
                                                       EmbeddingSource src) {
  std::vector<QueryEmbeddingRecord> records;
  for (const auto& q : split.queries) {
    const int idx = split.scene_index(q.scene_id);
    if (idx < 0) continue;
    QueryEmbeddingRecord r;
    r.scene_id = q.scene_id;
    r.box = q.box;
    r.identity = q.identity;
    r.embedding =
        model.query_embedding(split.train[static_cast<size_t>(idx)], q.box, src);
    records.push_back(std::move(r));
  }
  return records;
}

int run_generate(const GeneratorConfig& gcfg, const std::string& out_dir) {
  SearchSplit split = generate_dataset(gcfg);
  save_dataset(split, out_dir);
  int instances = 0;
  for (const auto& s : split.train) instances += static_cast<int>(s.persons.size());
  std::cout << "wrote " << split.train.size() << " scenes, " << instances << " person instances, "
            << split.queries.size() << " queries to " << out_dir << "\n";
  std::cout << "dataset hash: " << dataset_content_hash(out_dir) << "\n";
  return 0;
}

int run_train(const CommonTrainOpts& opts) {
  RunConfig cfg = resolve_config(opts);
  if (cfg.data_dir.empty()) throw std::invalid_argument("train: --data is required");
  if (cfg.run_dir.empty()) throw std::invalid_argument("train: --run is required");
  SearchSplit split = load_dataset(cfg.data_dir);
  std::cout << "training preset " << preset_name(cfg.preset) << " on " << split.train.size()
            << " scenes (" << Trainer::count_identities(split) << " identities)\n";
  Trainer trainer(cfg, split);
  TrainSummary summary = trainer.run();
  std::cout << "finished " << summary.steps << " steps; final total loss "
            << summary.history.back().losses.at("total") << "\n";

  EvalResult result = evaluate_split(trainer.model(), split);
  write_json((fs::path(cfg.run_dir) / "metrics.json").string(),
             metrics_to_json(result, "default"));
  std::cout << "train-split metrics: recall " << result.detection.recall << ", det AP "
            << result.detection.ap << ", mAP " << result.search.map << ", top-1 "
            << result.search.top1 << "\n";
  std::cout << "checkpoint: " << summary.final_checkpoint << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anchor-free person search on synthetic scenes"};
  app.require_subcommand(1);

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "render a synthetic dataset");
  GeneratorConfig gcfg;
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--scenes", gcfg.n_scenes, "number of scenes");
  gen->add_option("--ids", gcfg.n_ids, "number of labeled identities");
  gen->add_option("--persons-min", gcfg.persons_min, "min labeled persons per scene");
  gen->add_option("--persons-max", gcfg.persons_max, "max labeled persons per scene");
  gen->add_option("--scale-jitter", gcfg.scale_jitter, "person scale jitter fraction");
  gen->add_option("--illum-jitter", gcfg.illum_jitter, "illumination jitter fraction");
  gen->add_option("--unlabeled-fraction", gcfg.unlabeled_fraction,
                  "fraction of instances marked unlabeled");
  gen->add_option("--image-h", gcfg.image_h, "image height (multiple of 32)");
  gen->add_option("--image-w", gcfg.image_w, "image width (multiple of 32)");
  gen->add_option("--gallery-size", gcfg.gallery_size, "scenes per query gallery");
  gen->add_option("--queries-per-id", gcfg.queries_per_id, "queries per identity");
  gen->add_option("--seed", gcfg.seed, "generator seed");

  // train
  auto* train = app.add_subcommand("train", "train a model");
  CommonTrainOpts topts;
  train->add_option("--preset", topts.preset,
                    "alignps|roialignps|roialign_star|baseline_fcos_reid");
  train->add_option("--config", topts.config_file, "TOML config file");
  train->add_option("--set", topts.sets, "key=value override (repeatable)");
  train->add_option("--data", topts.data_dir, "dataset directory");
  train->add_option("--run", topts.run_dir, "run/output directory");
  auto* seed_opt = train->add_option("--seed", topts.seed, "training seed");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint or exported detections");
  std::string ev_ckpt, ev_data, ev_out = "metrics.json", ev_source = "default";
  std::string ev_dets, ev_queries, ev_export_dets, ev_export_queries;
  eval->add_option("--checkpoint", ev_ckpt, "model checkpoint");
  eval->add_option("--data", ev_data, "dataset directory")->required();
  eval->add_option("--out", ev_out, "metrics JSON output");
  eval->add_option("--embedding-source", ev_source, "default|fused|align|roi");
  eval->add_option("--detections", ev_dets, "pre-exported detections JSONL (file mode)");
  eval->add_option("--queries", ev_queries, "pre-exported query embeddings JSONL (file mode)");
  eval->add_option("--export-detections", ev_export_dets, "write detections JSONL");
  eval->add_option("--export-queries", ev_export_queries, "write query embeddings JSONL");

  // infer
  auto* infer = app.add_subcommand("infer", "run detection + embedding on scenes");
  std::string in_ckpt, in_data, in_scene, in_image, in_out = "detections.jsonl";
  infer->add_option("--checkpoint", in_ckpt, "model checkpoint")->required();
  infer->add_option("--data", in_data, "dataset directory");
  infer->add_option("--scene", in_scene, "scene id (default: all scenes)");
  infer->add_option("--image", in_image, "standalone PNG image");
  infer->add_option("--out", in_out, "detections JSONL output");

  // sweep-gallery
  auto* sweep = app.add_subcommand("sweep-gallery", "mAP versus gallery size");
  std::string sw_ckpt, sw_data, sw_csv = "sweep.csv", sw_plot, sw_sizes = "10,25,50";
  std::string sw_source = "default";
  sweep->add_option("--checkpoint", sw_ckpt, "model checkpoint")->required();
  sweep->add_option("--data", sw_data, "dataset directory")->required();
  sweep->add_option("--sizes", sw_sizes, "comma-separated gallery sizes");
  sweep->add_option("--out-csv", sw_csv, "CSV output path");
  sweep->add_option("--plot", sw_plot, "optional PNG chart path");
  sweep->add_option("--embedding-source", sw_source, "default|fused|align|roi");

  // plot
  auto* plot = app.add_subcommand("plot", "render a CSV as a line chart");
  std::string pl_csv, pl_out = "plot.png", pl_x, pl_xlabel, pl_ylabel = "VALUE";
  std::vector<std::string> pl_y;
  plot->add_option("--csv", pl_csv, "input CSV with a header row")->required();
  plot->add_option("--out", pl_out, "PNG output path");
  plot->add_option("--x", pl_x, "x column (default: first column)");
  plot->add_option("--y", pl_y, "y columns (default: every other numeric column)");
  plot->add_option("--x-label", pl_xlabel, "x axis label");
  plot->add_option("--y-label", pl_ylabel, "y axis label");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_generate(gcfg, gen_out);

    if (train->parsed()) {
      topts.seed_given = seed_opt->count() > 0;
      return run_train(topts);
    }

    if (eval->parsed()) {
      SearchSplit split = load_dataset(ev_data);
      EvalResult result;
      std::string source_name = ev_source;
      if (!ev_dets.empty()) {
        if (ev_queries.empty())
          throw std::invalid_argument("evaluate: file mode needs --detections and --queries");
        auto dets = load_detections_jsonl(ev_dets);
        auto qrecs = load_query_embeddings_jsonl(ev_queries);
        QueryEmbeddingFn qfn;
        qfn.fn = [&qrecs](const std::string& sid, const BoxF& box) {
          for (const auto& r : qrecs)
            if (r.scene_id == sid && std::abs(r.box.x1 - box.x1) < 1e-6 &&
                std::abs(r.box.y1 - box.y1) < 1e-6 && std::abs(r.box.x2 - box.x2) < 1e-6)
              return r.embedding;
          throw std::runtime_error("no exported embedding for a query in scene " + sid);
        };
        result.detection = detection_metrics(dets, split.train);
        result.search = search_map(split, dets, qfn);
        source_name = "file";
      } else {
        if (ev_ckpt.empty())
          throw std::invalid_argument("evaluate: needs --checkpoint or --detections/--queries");
        auto loaded = load_model_checkpoint(ev_ckpt);
        const EmbeddingSource src = embedding_source_from_string(ev_source);
        std::map<std::string, SceneDetections> dets;
        result = evaluate_split(*loaded.model, split, src, &dets);
        if (!ev_export_dets.empty()) save_detections_jsonl(ev_export_dets, dets);
        if (!ev_export_queries.empty())
          save_query_embeddings_jsonl(ev_export_queries,
                                      export_query_records(*loaded.model, split, src));
      }
      write_json(ev_out, metrics_to_json(result, source_name));
      std::cout << "recall " << result.detection.recall << "  det-AP " << result.detection.ap
                << "  mAP " << result.search.map << "  top-1 " << result.search.top1 << "  ("
                << result.search.n_queries << " queries, " << result.search.n_excluded
                << " excluded)\n";
      return 0;
    }

    if (infer->parsed()) {
      auto loaded = load_model_checkpoint(in_ckpt);
      std::map<std::string, SceneDetections> dets;
      if (!in_image.empty()) {
        SceneSample scene;
        scene.scene_id = fs::path(in_image).stem().string();
        scene.image = read_png(in_image);
        dets[scene.scene_id] = loaded.model->infer_scene(scene);
      } else {
        if (in_data.empty()) throw std::invalid_argument("infer: needs --image or --data");
        SearchSplit split = load_dataset(in_data);
        for (const auto& scene : split.train) {
          if (!in_scene.empty() && scene.scene_id != in_scene) continue;
          dets[scene.scene_id] = loaded.model->infer_scene(scene);
        }
        if (dets.empty()) throw std::invalid_argument("infer: scene not found: " + in_scene);
      }
      save_detections_jsonl(in_out, dets);
      size_t total = 0;
      for (const auto& [sid, d] : dets) total += d.boxes.size();
      std::cout << "wrote " << total << " detections for " << dets.size() << " scene(s) to "
                << in_out << "\n";
      return 0;
    }

    if (sweep->parsed()) {
      auto loaded = load_model_checkpoint(sw_ckpt);
      SearchSplit split = load_dataset(sw_data);
      const EmbeddingSource src = embedding_source_from_string(sw_source);
      std::map<std::string, SceneDetections> dets;
      for (const auto& scene : split.train)
        dets[scene.scene_id] = loaded.model->infer_scene(scene, src);
      QueryEmbeddingFn qfn;
      PersonSearchModel* model = loaded.model.get();
      qfn.fn = [model, &split, src](const std::string& sid, const BoxF& box) {
        const int idx = split.scene_index(sid);
        return model->query_embedding(split.train[static_cast<size_t>(idx)], box, src);
      };
      std::vector<int> sizes;
      for (const auto& tok : json::parse("[" + sw_sizes + "]")) sizes.push_back(tok.get<int>());
      auto points = gallery_size_sweep(split, dets, qfn, sizes);

      std::ofstream csv(sw_csv);
      csv << "gallery_size,mAP,top1\n";
      PlotSeries series;
      series.label = "MAP";
      for (const auto& p : points) {
        csv << p.size << "," << p.map << "," << p.top1 << "\n";
        series.x.push_back(p.size);
        series.y.push_back(p.map);
        std::cout << "gallery " << p.size << ": mAP " << p.map << ", top-1 " << p.top1 << "\n";
      }
      if (!sw_plot.empty()) save_line_chart(sw_plot, {series}, "GALLERY SIZE", "MAP");
      return 0;
    }

    if (plot->parsed()) {
      std::ifstream f(pl_csv);
      if (!f) throw std::runtime_error("plot: cannot open " + pl_csv);
      std::string line;
      if (!std::getline(f, line)) throw std::runtime_error("plot: empty CSV");
      std::vector<std::string> cols;
      {
        std::istringstream hs(line);
        std::string c;
        while (std::getline(hs, c, ',')) cols.push_back(c);
      }
      std::vector<std::vector<double>> data(cols.size());
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string c;
        size_t i = 0;
        while (std::getline(ls, c, ',') && i < cols.size()) data[i++].push_back(std::stod(c));
      }
      size_t xcol = 0;
      if (!pl_x.empty()) {
        const auto it = std::find(cols.begin(), cols.end(), pl_x);
        if (it == cols.end()) throw std::invalid_argument("plot: no column " + pl_x);
        xcol = static_cast<size_t>(it - cols.begin());
      }
      std::vector<PlotSeries> series;
      for (size_t c = 0; c < cols.size(); ++c) {
        if (c == xcol) continue;
        if (!pl_y.empty() && std::find(pl_y.begin(), pl_y.end(), cols[c]) == pl_y.end())
          continue;
        PlotSeries s;
        s.label = cols[c];
        s.x = data[xcol];
        s.y = data[c];
        series.push_back(std::move(s));
      }
      save_line_chart(pl_out, series, pl_xlabel.empty() ? cols[xcol] : pl_xlabel, pl_ylabel);
      std::cout << "wrote " << pl_out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
