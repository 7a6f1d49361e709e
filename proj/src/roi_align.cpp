#include "alignps/roi_align.hpp"

#include <cmath>
#include <stdexcept>

namespace alignps {

namespace {

inline bool in_support(double v, int n) { return v > -1.0 && v < static_cast<double>(n); }

double sample_plane(const double* plane, int h, int w, double y, double x) {
  if (!in_support(y, h) || !in_support(x, w)) return 0.0;
  if (y < 0) y = 0;
  if (x < 0) x = 0;
  const int y0 = static_cast<int>(y);
  const int x0 = static_cast<int>(x);
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double ly = y - y0, lx = x - x0;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  return hy * hx * plane[y0 * w + x0] + hy * lx * plane[y0 * w + x1] +
         ly * hx * plane[y1 * w + x0] + ly * lx * plane[y1 * w + x1];
}

void scatter_plane(double* plane, int h, int w, double y, double x, double g) {
  if (!in_support(y, h) || !in_support(x, w)) return;
  if (y < 0) y = 0;
  if (x < 0) x = 0;
  const int y0 = static_cast<int>(y);
  const int x0 = static_cast<int>(x);
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double ly = y - y0, lx = x - x0;
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  plane[y0 * w + x0] += hy * hx * g;
  plane[y0 * w + x1] += hy * lx * g;
  plane[y1 * w + x0] += ly * hx * g;
  plane[y1 * w + x1] += ly * lx * g;
}

}  // namespace

Var roi_align(const Var& feats, const std::vector<BoxF>& boxes, double spatial_scale, int pool,
              int sampling_ratio) {
  if (feats->value.ndim() != 3) throw std::invalid_argument("roi_align: (C,H,W) expected");
  const int c = feats->value.dim(0), h = feats->value.dim(1), w = feats->value.dim(2);
  const int nb = static_cast<int>(boxes.size());
  const int sr = sampling_ratio;
  const double inv_samples = 1.0 / (sr * sr);

  Tensord out({nb, c, pool, pool});
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  for (int b = 0; b < nb; ++b) {
    const double x1 = boxes[b].x1 * spatial_scale, y1 = boxes[b].y1 * spatial_scale;
    const double bw = std::max(boxes[b].width() * spatial_scale, 1e-6);
    const double bh = std::max(boxes[b].height() * spatial_scale, 1e-6);
    const double cell_w = bw / pool, cell_h = bh / pool;
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = feats->value.data() + static_cast<Eigen::Index>(ch) * hw;
      for (int py = 0; py < pool; ++py)
        for (int px = 0; px < pool; ++px) {
          double acc = 0.0;
          for (int iy = 0; iy < sr; ++iy)
            for (int ix = 0; ix < sr; ++ix) {
              const double sy = y1 + (py + (iy + 0.5) / sr) * cell_h;
              const double sx = x1 + (px + (ix + 0.5) / sr) * cell_w;
              acc += sample_plane(plane, h, w, sy, sx);
            }
          out(b, ch, py, px) = acc * inv_samples;
        }
    }
  }

  auto bxs = boxes;
  return make_op(std::move(out), {feats},
                 [feats, bxs, spatial_scale, pool, sr, inv_samples, c, h, w](Node& n) {
    if (!feats->requires_grad) return;
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    auto& gx = feats->ensure_grad();
    for (size_t b = 0; b < bxs.size(); ++b) {
      const double x1 = bxs[b].x1 * spatial_scale, y1 = bxs[b].y1 * spatial_scale;
      const double bw = std::max(bxs[b].width() * spatial_scale, 1e-6);
      const double bh = std::max(bxs[b].height() * spatial_scale, 1e-6);
      const double cell_w = bw / pool, cell_h = bh / pool;
      for (int ch = 0; ch < c; ++ch) {
        double* gplane = gx.data() + static_cast<Eigen::Index>(ch) * hw;
        for (int py = 0; py < pool; ++py)
          for (int px = 0; px < pool; ++px) {
            const double g = n.grad(static_cast<int>(b), ch, py, px) * inv_samples;
            if (g == 0.0) continue;
            for (int iy = 0; iy < sr; ++iy)
              for (int ix = 0; ix < sr; ++ix) {
                const double sy = y1 + (py + (iy + 0.5) / sr) * cell_h;
                const double sx = x1 + (px + (ix + 0.5) / sr) * cell_w;
                scatter_plane(gplane, h, w, sy, sx, g);
              }
          }
      }
    }
  });
}

}  // namespace alignps
