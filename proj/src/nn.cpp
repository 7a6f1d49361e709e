#include "alignps/nn.hpp"

#include <cmath>

namespace alignps {

Conv2dLayer Conv2dLayer::create(ParamStore& ps, const std::string& name, int cin, int cout, int k,
                                int stride, int pad, std::mt19937_64& rng, bool zero_init,
                                double bias_init) {
  Conv2dLayer l;
  l.stride = stride;
  l.pad = pad;
  Tensord w({cout, cin, k, k});
  if (!zero_init) {
    const double stddev = std::sqrt(2.0 / (cin * k * k));
    w = Tensord::randn({cout, cin, k, k}, rng, stddev);
  }
  l.w = ps.add(name + ".w", std::move(w));
  l.b = ps.add(name + ".b", Tensord::full({cout}, bias_init));
  return l;
}

GroupNormLayer GroupNormLayer::create(ParamStore& ps, const std::string& name, int channels,
                                      int groups) {
  GroupNormLayer l;
  l.groups = groups;
  l.gamma = ps.add(name + ".gamma", Tensord::full({channels}, 1.0));
  l.beta = ps.add(name + ".beta", Tensord({channels}));
  return l;
}

ConvBlock ConvBlock::create(ParamStore& ps, const std::string& name, int cin, int cout, int k,
                            int stride, int gn_groups, std::mt19937_64& rng) {
  ConvBlock b;
  b.conv = Conv2dLayer::create(ps, name + ".conv", cin, cout, k, stride, k / 2, rng);
  b.gn = GroupNormLayer::create(ps, name + ".gn", cout, gn_groups);
  return b;
}

DeformConvLayer DeformConvLayer::create(ParamStore& ps, const std::string& name, int cin,
                                        int cout, std::mt19937_64& rng) {
  DeformConvLayer l;
  l.offset_conv = Conv2dLayer::create(ps, name + ".offset", cin, 18, 3, 1, 1, rng,
                                      /*zero_init=*/true);
  const double stddev = std::sqrt(2.0 / (cin * 9));
  l.w = ps.add(name + ".w", Tensord::randn({cout, cin, 3, 3}, rng, stddev));
  l.b = ps.add(name + ".b", Tensord({cout}));
  return l;
}

LinearLayer LinearLayer::create(ParamStore& ps, const std::string& name, int din, int dout,
                                std::mt19937_64& rng) {
  LinearLayer l;
  const double stddev = std::sqrt(2.0 / din);
  l.w = ps.add(name + ".w", Tensord::randn({dout, din}, rng, stddev));
  l.b = ps.add(name + ".b", Tensord({dout}));
  return l;
}

}  // namespace alignps
