// Checkpoints are a flat map of named entries: f64 tensors (parameters,
// optimizer state, memory banks) and byte blobs (resolved config, RNG state,
// dataset hash). The format is stable and documented in the README.
#pragma once

#include <map>
#include <memory>

#include "alignps/model.hpp"
#include "alignps/optimizer.hpp"

namespace alignps {

struct CheckpointData {
  std::map<std::string, Tensord> tensors;
  std::map<std::string, std::string> blobs;
};

void save_checkpoint_file(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint_file(const std::string& path);

struct TrainState {
  int epoch = 0;
  long step = 0;
  std::string rng_state;
  std::string dataset_hash;
};

CheckpointData snapshot_training(const PersonSearchModel& model, const SgdOptimizer& opt,
                                 const TrainState& state);

struct LoadedCheckpoint {
  RunConfig cfg;
  std::unique_ptr<PersonSearchModel> model;
  TrainState state;
  CheckpointData raw;
};

// Rebuilds the model from the embedded config and restores parameters and
// memory banks; throws a schema error on any missing or mismatched entry.
LoadedCheckpoint load_model_checkpoint(const std::string& path);

void restore_optimizer(const CheckpointData& data, const PersonSearchModel& model,
                       SgdOptimizer& opt);

}  // namespace alignps
