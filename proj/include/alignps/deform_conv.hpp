// 3x3 deformable convolution (stride 1, zero padding 1) with per-location
// learned sampling offsets. Bilinear sampling treats everything outside the
// input as zero.
#pragma once

#include "alignps/autograd.hpp"

namespace alignps {

// x: (C,H,W); w: (Co,C,3,3); b: (Co); offsets: (18,H,W) where channel 2k is
// the y-offset and 2k+1 the x-offset of kernel tap k (row-major taps).
// Differentiable w.r.t. x, w, b and offsets.
Var deform_conv2d(const Var& x, const Var& w, const Var& b, const Var& offsets);

// Bilinear lookup with zero outside [-0,H)x[0,W); exposed for oracles.
double bilinear_sample(const Tensord& x, int channel, double y, double xx);

}  // namespace alignps
