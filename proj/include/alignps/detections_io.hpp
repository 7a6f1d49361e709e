// JSONL export/import of detections and query embeddings (one detection per
// line; embeddings as base64 float32).
#pragma once

#include "alignps/search_eval.hpp"

namespace alignps {

void save_detections_jsonl(const std::string& path,
                           const std::map<std::string, SceneDetections>& dets);
std::map<std::string, SceneDetections> load_detections_jsonl(const std::string& path);

struct QueryEmbeddingRecord {
  std::string scene_id;
  BoxF box;
  int identity = 0;
  Eigen::VectorXd embedding;
};

void save_query_embeddings_jsonl(const std::string& path,
                                 const std::vector<QueryEmbeddingRecord>& records);
std::vector<QueryEmbeddingRecord> load_query_embeddings_jsonl(const std::string& path);

}  // namespace alignps
