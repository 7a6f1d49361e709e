// Run configuration: model presets, training schedule, and the key=value
// surface shared by the TOML config file and --set overrides.
#pragma once

#include <string>
#include <vector>

#include "alignps/backbone_afa.hpp"
#include "alignps/fcos_head.hpp"
#include "alignps/mutual_learning.hpp"
#include "alignps/optimizer.hpp"
#include "alignps/reid_memory.hpp"
#include "alignps/roi_branch.hpp"

namespace alignps {

enum class ModelPreset { kAlignPs, kRoiAlignPs, kRoiAlignStar, kBaselineFcosReid };
enum class ReidLossKind { kOim, kToim };
enum class EmbeddingSource { kDefault, kFused, kAlignOnly, kRoiOnly };

ModelPreset preset_from_string(const std::string& s);
std::string preset_name(ModelPreset p);
EmbeddingSource embedding_source_from_string(const std::string& s);

struct MutualConfig {
  bool mi = false, kl = false, dv = false;
  double w_mi = 1.0, w_kl = 1.0, w_dv = 1.0;
  KlTeacher kl_teacher = KlTeacher::kAlign;
  int mine_hidden = 256;

  bool any() const { return mi || kl || dv; }
};

struct ScheduleConfig {
  int epochs = 12;
  std::vector<int> decay_epochs{8, 11};
  double decay_factor = 0.1;
  int warmup_steps = 100;
};

struct RunConfig {
  ModelPreset preset = ModelPreset::kAlignPs;

  BackboneConfig backbone;
  AfaConfig afa;
  FcosConfig fcos;
  RpnConfig rpn;
  bool train_with_rpn = true;
  int roi_pool = 7;
  int roi_train_rois = 8;  // matched proposals pooled per scene on top of GT
  int roi_stage_convs = 2;  // branch-private conv stage depth

  ReidLossKind reid_loss = ReidLossKind::kToim;
  TripletConfig triplet;
  int queue_size = 64;
  double oim_temperature = 0.1;
  double oim_momentum = 0.5;
  bool focal_oim = true;
  double focal_oim_gamma = 2.0;
  double reid_weight = 1.0;
  double roi_reid_weight = 1.0;
  int reid_warmup_steps = 0;  // ramp the re-id weights over the first steps

  MutualConfig mutual;

  SgdConfig optimizer{0.01, 0.9, 5e-4};
  ScheduleConfig schedule;
  int batch_size = 4;
  bool multiscale = false;
  int ms_min = 96, ms_max = 160;
  bool debug_probe = false;

  std::string data_dir;
  std::string run_dir;
  uint64_t seed = 0;
};

// Presets resolve the architectural switches; later key=value settings still
// override individual fields.
void apply_preset(RunConfig& cfg, ModelPreset preset);

// Throws std::invalid_argument on unknown keys or malformed values.
void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value);

// Minimal TOML subset: [section] headers, key = value with strings, bools,
// numbers and flat arrays; '#' comments.
void load_config_toml(RunConfig& cfg, const std::string& path);

// Fully resolved config as TOML (the inverse of the loader).
std::string config_to_toml(const RunConfig& cfg);
RunConfig config_from_toml_string(const std::string& text);

}  // namespace alignps
