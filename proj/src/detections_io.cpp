#include "alignps/detections_io.hpp"

#include <json.hpp>

#include <fstream>

#include "alignps/encoding.hpp"

using nlohmann::json;

namespace alignps {

namespace {

std::vector<float> row_to_floats(const Tensord& m, int row) {
  std::vector<float> v(static_cast<size_t>(m.dim(1)));
  for (int c = 0; c < m.dim(1); ++c) v[static_cast<size_t>(c)] = static_cast<float>(m(row, c));
  return v;
}

}  // namespace

void save_detections_jsonl(const std::string& path,
                           const std::map<std::string, SceneDetections>& dets) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_detections_jsonl: cannot write " + path);
  for (const auto& [sid, det] : dets)
    for (size_t i = 0; i < det.boxes.size(); ++i) {
      json line = {
          {"scene_id", sid},
          {"box", {det.boxes[i].x1, det.boxes[i].y1, det.boxes[i].x2, det.boxes[i].y2}},
          {"score", det.scores[i]},
          {"embedding", base64_encode_floats(row_to_floats(det.embeddings, static_cast<int>(i)))}};
      f << line.dump() << "\n";
    }
}

std::map<std::string, SceneDetections> load_detections_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_detections_jsonl: cannot open " + path);
  std::map<std::string, std::vector<std::tuple<BoxF, double, std::vector<float>>>> raw;
  std::string line;
  int line_no = 0;
  size_t dim = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("detections line " + std::to_string(line_no) +
                               ": parse error: " + e.what());
    }
    BoxF b{j.at("box")[0], j.at("box")[1], j.at("box")[2], j.at("box")[3]};
    auto emb = base64_decode_floats(j.at("embedding").get<std::string>());
    if (dim == 0) dim = emb.size();
    if (emb.size() != dim)
      throw std::runtime_error("detections line " + std::to_string(line_no) +
                               ": inconsistent embedding dimension");
    raw[j.at("scene_id").get<std::string>()].emplace_back(b, j.at("score").get<double>(),
                                                          std::move(emb));
  }
  std::map<std::string, SceneDetections> out;
  for (auto& [sid, rows] : raw) {
    SceneDetections det;
    det.scene_id = sid;
    det.embeddings = Tensord({static_cast<int>(rows.size()), static_cast<int>(dim)});
    for (size_t i = 0; i < rows.size(); ++i) {
      det.boxes.push_back(std::get<0>(rows[i]));
      det.scores.push_back(std::get<1>(rows[i]));
      const auto& e = std::get<2>(rows[i]);
      for (size_t c = 0; c < e.size(); ++c)
        det.embeddings(static_cast<int>(i), static_cast<int>(c)) = e[c];
    }
    out[sid] = std::move(det);
  }
  return out;
}

void save_query_embeddings_jsonl(const std::string& path,
                                 const std::vector<QueryEmbeddingRecord>& records) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_query_embeddings_jsonl: cannot write " + path);
  for (const auto& r : records) {
    std::vector<float> emb(static_cast<size_t>(r.embedding.size()));
    for (Eigen::Index i = 0; i < r.embedding.size(); ++i)
      emb[static_cast<size_t>(i)] = static_cast<float>(r.embedding[i]);
    json line = {{"scene_id", r.scene_id},
                 {"box", {r.box.x1, r.box.y1, r.box.x2, r.box.y2}},
                 {"identity", r.identity},
                 {"embedding", base64_encode_floats(emb)}};
    f << line.dump() << "\n";
  }
}

std::vector<QueryEmbeddingRecord> load_query_embeddings_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_query_embeddings_jsonl: cannot open " + path);
  std::vector<QueryEmbeddingRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    QueryEmbeddingRecord r;
    r.scene_id = j.at("scene_id").get<std::string>();
    r.box = BoxF{j.at("box")[0], j.at("box")[1], j.at("box")[2], j.at("box")[3]};
    r.identity = j.at("identity").get<int>();
    auto emb = base64_decode_floats(j.at("embedding").get<std::string>());
    r.embedding.resize(static_cast<Eigen::Index>(emb.size()));
    for (size_t i = 0; i < emb.size(); ++i) r.embedding[static_cast<Eigen::Index>(i)] = emb[i];
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace alignps
