// Training loop: warmup + stepped-decay schedule, per-step loss logging,
// per-epoch checkpoints, deterministic in the run seed.
#pragma once

#include "alignps/checkpoint.hpp"

namespace alignps {

struct StepLog {
  long step = 0;
  int epoch = 0;
  double lr = 0.0;
  std::map<std::string, double> losses;
};

struct TrainSummary {
  std::string final_checkpoint;
  std::vector<StepLog> history;
  long steps = 0;
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, const SearchSplit& split);

  TrainSummary run();
  PersonSearchModel& model() { return *model_; }

  static int count_identities(const SearchSplit& split);

 private:
  double lr_scale(long step, int epoch) const;

  RunConfig cfg_;
  const SearchSplit* split_;
  std::unique_ptr<PersonSearchModel> model_;
};

// Runs the model over every scene and scores detection and search metrics.
struct EvalResult {
  DetectionMetrics detection;
  SearchMetrics search;
};

EvalResult evaluate_split(PersonSearchModel& model, const SearchSplit& split,
                          EmbeddingSource src = EmbeddingSource::kDefault,
                          std::map<std::string, SceneDetections>* out_dets = nullptr);

}  // namespace alignps
