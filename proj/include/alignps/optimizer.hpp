// SGD with momentum (the training optimizer) and Adam (used by estimator
// sanity checks).
#pragma once

#include <vector>

#include "alignps/autograd.hpp"

namespace alignps {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // Offset-prediction convs train at a reduced rate, as is usual for
  // deformable convolutions.
  double offset_lr_mult = 0.1;
};

class SgdOptimizer {
 public:
  SgdOptimizer(const ParamStore& params, SgdConfig cfg);

  // v <- momentum*v + (g + wd*w); w <- w - lr*lr_scale*v
  void step(double lr_scale = 1.0);
  void zero_grad();

  std::vector<Tensord>& velocities() { return velocity_; }
  const SgdConfig& config() const { return cfg_; }

 private:
  const ParamStore* params_;
  SgdConfig cfg_;
  std::vector<Tensord> velocity_;
  std::vector<double> lr_mult_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamOptimizer {
 public:
  AdamOptimizer(const ParamStore& params, AdamConfig cfg);
  void step();
  void zero_grad();

 private:
  const ParamStore* params_;
  AdamConfig cfg_;
  std::vector<Tensord> m_, v_;
  long t_ = 0;
};

}  // namespace alignps
