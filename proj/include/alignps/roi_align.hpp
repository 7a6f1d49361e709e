// Bilinear region pooling of (C,H,W) feature maps to a fixed grid.
#pragma once

#include "alignps/autograd.hpp"
#include "alignps/geometry.hpp"

#include <vector>

namespace alignps {

// Boxes are in image pixels; spatial_scale maps image to feature coordinates
// (1/stride). Each output cell averages sampling_ratio^2 bilinear samples.
// Output is (N, C, pool, pool); differentiable w.r.t. feats only.
Var roi_align(const Var& feats, const std::vector<BoxF>& boxes, double spatial_scale, int pool,
              int sampling_ratio = 2);

}  // namespace alignps
