#include "alignps/deform_conv.hpp"
#include <limits>

#include <cmath>
#include <stdexcept>

namespace alignps {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline bool in_support(double v, int n) { return v > -1.0 && v < static_cast<double>(n); }

struct TapGrad {
  double d_val_d_y = 0.0;
  double d_val_d_x = 0.0;
};

double sample(const double* plane, int h, int w, double y, double x) {
  if (!in_support(y, h) || !in_support(x, w)) return 0.0;
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = y0 + 1, x1 = x0 + 1;
  const double ly = y - y0, lx = x - x0;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  double v00 = 0, v01 = 0, v10 = 0, v11 = 0;
  if (y0 >= 0 && x0 >= 0) v00 = plane[y0 * w + x0];
  if (y0 >= 0 && x1 <= w - 1) v01 = plane[y0 * w + x1];
  if (y1 <= h - 1 && x0 >= 0) v10 = plane[y1 * w + x0];
  if (y1 <= h - 1 && x1 <= w - 1) v11 = plane[y1 * w + x1];
  return hy * hx * v00 + hy * lx * v01 + ly * hx * v10 + ly * lx * v11;
}

TapGrad coordinate_grad(const double* plane, int h, int w, double y, double x) {
  TapGrad g;
  if (!in_support(y, h) || !in_support(x, w)) return g;
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = y0 + 1, x1 = x0 + 1;
  const double ly = y - y0, lx = x - x0;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  double v00 = 0, v01 = 0, v10 = 0, v11 = 0;
  if (y0 >= 0 && x0 >= 0) v00 = plane[y0 * w + x0];
  if (y0 >= 0 && x1 <= w - 1) v01 = plane[y0 * w + x1];
  if (y1 <= h - 1 && x0 >= 0) v10 = plane[y1 * w + x0];
  if (y1 <= h - 1 && x1 <= w - 1) v11 = plane[y1 * w + x1];
  g.d_val_d_y = hx * (v10 - v00) + lx * (v11 - v01);
  g.d_val_d_x = hy * (v01 - v00) + ly * (v11 - v10);
  return g;
}

void scatter(double* plane, int h, int w, double y, double x, double g) {
  if (!in_support(y, h) || !in_support(x, w)) return;
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = y0 + 1, x1 = x0 + 1;
  const double ly = y - y0, lx = x - x0;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  if (y0 >= 0 && x0 >= 0) plane[y0 * w + x0] += hy * hx * g;
  if (y0 >= 0 && x1 <= w - 1) plane[y0 * w + x1] += hy * lx * g;
  if (y1 <= h - 1 && x0 >= 0) plane[y1 * w + x0] += ly * hx * g;
  if (y1 <= h - 1 && x1 <= w - 1) plane[y1 * w + x1] += ly * lx * g;
}

}  // namespace

double bilinear_sample(const Tensord& x, int channel, double y, double xx) {
  const int h = x.dim(1), w = x.dim(2);
  return sample(x.data() + static_cast<Eigen::Index>(channel) * h * w, h, w, y, xx);
}

Var deform_conv2d(const Var& x, const Var& w, const Var& b, const Var& offsets) {
  constexpr int kK = 3, kTaps = kK * kK, kPad = 1;
  if (x->value.ndim() != 3 || w->value.ndim() != 4)
    throw std::invalid_argument("deform_conv2d: rank mismatch");
  const int ci = x->value.dim(0), h = x->value.dim(1), wd = x->value.dim(2);
  const int co = w->value.dim(0);
  if (w->value.dim(1) != ci || w->value.dim(2) != kK || w->value.dim(3) != kK)
    throw std::invalid_argument("deform_conv2d: weight shape mismatch");
  if (offsets->value.ndim() != 3 || offsets->value.dim(0) != 2 * kTaps ||
      offsets->value.dim(1) != h || offsets->value.dim(2) != wd)
    throw std::invalid_argument("deform_conv2d: offset shape mismatch with input");

  const Eigen::Index hw = static_cast<Eigen::Index>(h) * wd;
  auto cols = std::make_shared<RowMat>(RowMat::Zero(static_cast<Eigen::Index>(ci) * kTaps, hw));
  const Tensord& off = offsets->value;
  for (int c = 0; c < ci; ++c) {
    const double* plane = x->value.data() + static_cast<Eigen::Index>(c) * hw;
    for (int k = 0; k < kTaps; ++k) {
      const int ky = k / kK - kPad, kx = k % kK - kPad;
      const Eigen::Index row = static_cast<Eigen::Index>(c) * kTaps + k;
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < wd; ++xx) {
          const double py = y + ky + off(2 * k, y, xx);
          const double px = xx + kx + off(2 * k + 1, y, xx);
          // Non-finite offsets must surface as non-finite outputs rather
          // than read as out-of-support zeros.
          (*cols)(row, static_cast<Eigen::Index>(y) * wd + xx) =
              (std::isfinite(py) && std::isfinite(px))
                  ? sample(plane, h, wd, py, px)
                  : std::numeric_limits<double>::quiet_NaN();
        }
    }
  }

  Tensord out({co, h, wd});
  out.mat(co, static_cast<int>(hw)).noalias() = w->value.mat(co, ci * kTaps) * (*cols);
  for (int c = 0; c < co; ++c) out.mat(co, static_cast<int>(hw)).row(c).array() += b->value[c];

  return make_op(std::move(out), {x, w, b, offsets},
                 [x, w, b, offsets, cols, ci, co, h, wd](Node& n) {
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * wd;
    auto gout = n.grad.mat(co, static_cast<int>(hw));
    if (b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (int c = 0; c < co; ++c) gb[c] += gout.row(c).sum();
    }
    if (w->requires_grad)
      w->ensure_grad().mat(co, ci * kTaps).noalias() += gout * cols->transpose();

    const bool need_x = x->requires_grad;
    const bool need_off = offsets->requires_grad;
    if (!need_x && !need_off) return;

    RowMat gcols = w->value.mat(co, ci * kTaps).transpose() * gout;
    const Tensord& off = offsets->value;
    Tensord* gx = need_x ? &x->ensure_grad() : nullptr;
    Tensord* goff = need_off ? &offsets->ensure_grad() : nullptr;
    for (int c = 0; c < ci; ++c) {
      const double* plane = x->value.data() + static_cast<Eigen::Index>(c) * hw;
      double* gplane = need_x ? gx->data() + static_cast<Eigen::Index>(c) * hw : nullptr;
      for (int k = 0; k < kTaps; ++k) {
        const int ky = k / kK - kPad, kx = k % kK - kPad;
        const Eigen::Index row = static_cast<Eigen::Index>(c) * kTaps + k;
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < wd; ++xx) {
            const double g = gcols(row, static_cast<Eigen::Index>(y) * wd + xx);
            if (g == 0.0) continue;
            const double py = y + ky + off(2 * k, y, xx);
            const double px = xx + kx + off(2 * k + 1, y, xx);
            if (need_x) scatter(gplane, h, wd, py, px, g);
            if (need_off) {
              const TapGrad tg = coordinate_grad(plane, h, wd, py, px);
              (*goff)(2 * k, y, xx) += g * tg.d_val_d_y;
              (*goff)(2 * k + 1, y, xx) += g * tg.d_val_d_x;
            }
          }
      }
    }
  });
}

}  // namespace alignps
