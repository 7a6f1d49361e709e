#include "alignps/backbone_afa.hpp"

#include <stdexcept>

namespace alignps {

Backbone Backbone::create(ParamStore& ps, const std::string& prefix, const BackboneConfig& cfg,
                          std::mt19937_64& rng) {
  if (cfg.channels.size() != 4) throw std::invalid_argument("backbone: four stages expected");
  Backbone b;
  b.cfg_ = cfg;
  b.stem_ = ConvBlock::create(ps, prefix + ".stem", 3, cfg.channels[0], 3, 2, cfg.gn_groups, rng);
  int cin = cfg.channels[0];
  for (int s = 0; s < 4; ++s) {
    const int cout = cfg.channels[static_cast<size_t>(s)];
    const std::string sname = prefix + ".stage" + std::to_string(s + 1);
    b.stages_[s].push_back(ConvBlock::create(ps, sname + ".0", cin, cout, 3, 2, cfg.gn_groups, rng));
    b.stages_[s].push_back(ConvBlock::create(ps, sname + ".1", cout, cout, 3, 1, cfg.gn_groups, rng));
    cin = cout;
  }
  return b;
}

TrunkFeatures Backbone::forward_trunk(const Var& image) const {
  if (image->value.ndim() != 3 || image->value.dim(0) != 3)
    throw std::invalid_argument("backbone: (3,H,W) image expected");
  if (image->value.dim(1) % 32 != 0 || image->value.dim(2) % 32 != 0)
    throw std::invalid_argument("backbone: image dims must be multiples of 32 (pad first)");
  Var x = stem_.forward(image);
  for (const auto& blk : stages_[0]) x = blk.forward(x);
  for (const auto& blk : stages_[1]) x = blk.forward(x);
  TrunkFeatures t;
  t.c3 = x;
  for (const auto& blk : stages_[2]) x = blk.forward(x);
  t.c4 = x;
  return t;
}

Var Backbone::forward_c5(const Var& c4) const {
  Var x = c4;
  for (const auto& blk : stages_[3]) x = blk.forward(x);
  return x;
}

FeaturePyramid Backbone::forward(const Var& image) const {
  TrunkFeatures t = forward_trunk(image);
  return {t.c3, t.c4, forward_c5(t.c4)};
}

Afa Afa::create(ParamStore& ps, const std::string& prefix, const AfaConfig& cfg,
                const std::vector<int>& in_channels, std::mt19937_64& rng) {
  if (in_channels.size() != 3) throw std::invalid_argument("afa: three input levels expected");
  Afa a;
  a.cfg_ = cfg;
  const int d = cfg.d;
  for (int i = 0; i < 3; ++i) {
    const std::string lname = prefix + ".lateral" + std::to_string(i + 3);
    if (cfg.lateral_deform)
      a.lat_deform_[i] = DeformConvLayer::create(ps, lname, in_channels[static_cast<size_t>(i)],
                                                 d, rng);
    else
      a.lat_plain_[i] = Conv2dLayer::create(ps, lname, in_channels[static_cast<size_t>(i)], d, 1,
                                            1, 0, rng);
  }
  if (cfg.fuse_mode == FuseMode::kConcat)
    for (int i = 0; i < 2; ++i)
      a.reduce_[i] = Conv2dLayer::create(ps, prefix + ".reduce" + std::to_string(i + 3), 2 * d, d,
                                         1, 1, 0, rng);
  const int n_out = afa_level_count(cfg.levels);
  for (int i = 0; i < n_out; ++i) {
    const std::string oname = prefix + ".output" + std::to_string(i + 3);
    if (cfg.output_deform)
      a.out_deform_[i] = DeformConvLayer::create(ps, oname, d, d, rng);
    else
      a.out_plain_[i] = Conv2dLayer::create(ps, oname, d, d, 3, 1, 1, rng);
  }
  return a;
}

std::vector<const DeformConvLayer*> Afa::deform_layers() const {
  std::vector<const DeformConvLayer*> out;
  for (int i = 0; i < 3; ++i) {
    if (lat_deform_[i]) out.push_back(&*lat_deform_[i]);
    if (out_deform_[i]) out.push_back(&*out_deform_[i]);
  }
  return out;
}

Var Afa::lateral(int i, const Var& x) const {
  return cfg_.lateral_deform ? lat_deform_[i]->forward(x) : lat_plain_[i]->forward(x);
}

Var Afa::fuse(int i, const Var& lat, const Var& top) const {
  if (cfg_.fuse_mode == FuseMode::kSum) return add(lat, top);
  return reduce_[i]->forward(concat_ch(lat, top));
}

Var Afa::output(int i, const Var& x) const {
  return cfg_.output_deform ? out_deform_[i]->forward(x) : out_plain_[i]->forward(x);
}

AfaOutput Afa::forward(const FeaturePyramid& pyr) const {
  const Var t5 = lateral(2, pyr.c5);
  const Var t4 = fuse(1, lateral(1, pyr.c4), upsample_nearest2(t5));
  const Var t3 = fuse(0, lateral(0, pyr.c3), upsample_nearest2(t4));

  AfaOutput out;
  out.maps.push_back(output(0, t3));
  out.strides.push_back(8);
  if (cfg_.levels != AfaLevels::kP3Only) {
    out.maps.push_back(output(1, t4));
    out.strides.push_back(16);
  }
  if (cfg_.levels == AfaLevels::kP3P4P5) {
    out.maps.push_back(output(2, t5));
    out.strides.push_back(32);
  }
  return out;
}

Var reid_embed_at(const AfaOutput& out, const std::vector<LevelLoc>& locations) {
  if (locations.empty()) throw std::invalid_argument("reid_embed_at: no locations");
  bool single_level = true;
  for (const auto& l : locations)
    if (l.level != locations[0].level) single_level = false;
  if (single_level) {
    std::vector<std::pair<int, int>> yx;
    yx.reserve(locations.size());
    for (const auto& l : locations) yx.emplace_back(l.y, l.x);
    return rows_normalize(gather_channels(out.maps.at(static_cast<size_t>(locations[0].level)), yx));
  }
  std::vector<Var> rows;
  rows.reserve(locations.size());
  for (const auto& l : locations)
    rows.push_back(
        gather_channels(out.maps.at(static_cast<size_t>(l.level)), {{l.y, l.x}}));
  return rows_normalize(stack_rows(rows));
}

Tensord pad_to_multiple32(const Tensord& image) {
  if (image.ndim() != 3) throw std::invalid_argument("pad_to_multiple32: (3,H,W) expected");
  const int h = image.dim(1), w = image.dim(2);
  const int ph = (h + 31) / 32 * 32, pw = (w + 31) / 32 * 32;
  if (ph == h && pw == w) return image;
  Tensord out({image.dim(0), ph, pw});
  for (int c = 0; c < image.dim(0); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out(c, y, x) = image(c, y, x);
  return out;
}

}  // namespace alignps
