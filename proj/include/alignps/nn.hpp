// Parameterized building blocks. Each block registers its tensors in a
// ParamStore under a dotted name so checkpoints see a flat name->array map.
#pragma once

#include <random>
#include <string>

#include "alignps/deform_conv.hpp"
#include "alignps/ops.hpp"

namespace alignps {

// Largest power-of-two group count <= 8 that divides the channel count.
inline int gn_groups_for(int channels) {
  for (int g : {8, 4, 2})
    if (channels % g == 0) return g;
  return 1;
}

struct Conv2dLayer {
  Var w, b;
  int stride = 1, pad = 1;

  static Conv2dLayer create(ParamStore& ps, const std::string& name, int cin, int cout, int k,
                            int stride, int pad, std::mt19937_64& rng, bool zero_init = false,
                            double bias_init = 0.0);
  Var forward(const Var& x) const { return conv2d(x, w, b, stride, pad); }
};

struct GroupNormLayer {
  Var gamma, beta;
  int groups = 8;

  static GroupNormLayer create(ParamStore& ps, const std::string& name, int channels, int groups);
  Var forward(const Var& x) const { return group_norm(x, gamma, beta, groups); }
};

// conv -> group norm -> relu
struct ConvBlock {
  Conv2dLayer conv;
  GroupNormLayer gn;

  static ConvBlock create(ParamStore& ps, const std::string& name, int cin, int cout, int k,
                          int stride, int gn_groups, std::mt19937_64& rng);
  Var forward(const Var& x) const { return relu(gn.forward(conv.forward(x))); }
};

// 3x3 deformable conv whose offsets come from a zero-initialized plain 3x3
// conv over the same input, so training starts in the standard-conv regime.
struct DeformConvLayer {
  Conv2dLayer offset_conv;
  Var w, b;

  static DeformConvLayer create(ParamStore& ps, const std::string& name, int cin, int cout,
                                std::mt19937_64& rng);
  Var forward(const Var& x) const { return deform_conv2d(x, w, b, offset_conv.forward(x)); }
};

struct LinearLayer {
  Var w, b;

  static LinearLayer create(ParamStore& ps, const std::string& name, int din, int dout,
                            std::mt19937_64& rng);
  Var forward(const Var& x) const { return linear(x, w, b); }
};

}  // namespace alignps
