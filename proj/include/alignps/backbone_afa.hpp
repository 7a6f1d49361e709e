// Scratch stride-8/16/32 backbone and the aligned feature aggregation module:
// a reshaped top-down pathway producing a single stride-8 embedding map by
// default, with switches for deformable laterals/output and concat fusion.
#pragma once

#include <optional>

#include "alignps/nn.hpp"

namespace alignps {

struct BackboneConfig {
  std::vector<int> channels{32, 64, 128, 256};  // stage outputs at strides 4/8/16/32
  int gn_groups = 8;
};

struct TrunkFeatures {
  Var c3;  // stride 8
  Var c4;  // stride 16
};

struct FeaturePyramid {
  Var c3, c4, c5;  // strides 8/16/32
};

class Backbone {
 public:
  static Backbone create(ParamStore& ps, const std::string& prefix, const BackboneConfig& cfg,
                         std::mt19937_64& rng);

  // Shared stages (stem..stage3). Both branches read these features.
  TrunkFeatures forward_trunk(const Var& image) const;
  // Final stage, owned by the anchor-free branch.
  Var forward_c5(const Var& c4) const;
  FeaturePyramid forward(const Var& image) const;

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  ConvBlock stem_;
  std::vector<ConvBlock> stages_[4];
};

enum class FuseMode { kSum, kConcat };
enum class AfaLevels { kP3Only, kP3P4, kP3P4P5 };

struct AfaConfig {
  bool lateral_deform = true;
  bool output_deform = true;
  FuseMode fuse_mode = FuseMode::kConcat;
  AfaLevels levels = AfaLevels::kP3Only;
  int d = 256;  // embedding dimension, equal to the output channel count
};

inline int afa_level_count(AfaLevels l) {
  return l == AfaLevels::kP3Only ? 1 : (l == AfaLevels::kP3P4 ? 2 : 3);
}

struct AfaOutput {
  std::vector<Var> maps;     // maps[0] = P3; optional P4, P5
  std::vector<int> strides;  // 8, 16, 32
};

class Afa {
 public:
  static Afa create(ParamStore& ps, const std::string& prefix, const AfaConfig& cfg,
                    const std::vector<int>& in_channels, std::mt19937_64& rng);

  AfaOutput forward(const FeaturePyramid& pyr) const;
  const AfaConfig& config() const { return cfg_; }
  std::vector<const DeformConvLayer*> deform_layers() const;

 private:
  Var lateral(int i, const Var& x) const;
  Var fuse(int i, const Var& lat, const Var& top) const;
  Var output(int i, const Var& x) const;

  AfaConfig cfg_;
  std::optional<DeformConvLayer> lat_deform_[3];
  std::optional<Conv2dLayer> lat_plain_[3];
  std::optional<Conv2dLayer> reduce_[2];       // after concat fusion at P3/P4
  std::optional<DeformConvLayer> out_deform_[3];
  std::optional<Conv2dLayer> out_plain_[3];
};

struct LevelLoc {
  int level = 0;
  int y = 0;
  int x = 0;
};

// Channel vectors at feature-map locations, L2-normalized to unit norm; these
// are the final re-id embeddings (no extra embedding layer).
Var reid_embed_at(const AfaOutput& out, const std::vector<LevelLoc>& locations);

// Pads (3,H,W) image tensors on the bottom/right to multiples of 32.
Tensord pad_to_multiple32(const Tensord& image);

}  // namespace alignps
