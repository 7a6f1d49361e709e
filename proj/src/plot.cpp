#include "alignps/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace alignps {

namespace {

// 5x7 glyphs, row-major bits (MSB left), for the characters charts need.
struct Glyph {
  char c;
  uint8_t rows[7];
};

const Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11}},
    {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
};

const Glyph* find_glyph(char c) {
  c = static_cast<char>(toupper(static_cast<unsigned char>(c)));
  for (const auto& g : kFont)
    if (g.c == c) return &g;
  return nullptr;
}

void put_pixel(ImageU8& img, int x, int y, uint8_t r, uint8_t g, uint8_t b) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  img.at(y, x, 0) = r;
  img.at(y, x, 1) = g;
  img.at(y, x, 2) = b;
}

void draw_text(ImageU8& img, int x, int y, const std::string& text, uint8_t r = 20,
               uint8_t g = 20, uint8_t b = 20) {
  int cx = x;
  for (char c : text) {
    if (const Glyph* gl = find_glyph(c)) {
      for (int ry = 0; ry < 7; ++ry)
        for (int rx = 0; rx < 5; ++rx)
          if (gl->rows[ry] & (1 << (4 - rx))) put_pixel(img, cx + rx, y + ry, r, g, b);
    }
    cx += 6;
  }
}

void draw_line(ImageU8& img, double x0, double y0, double x1, double y1, uint8_t r, uint8_t g,
               uint8_t b) {
  const int steps = std::max(2, static_cast<int>(std::hypot(x1 - x0, y1 - y0)) * 2);
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    put_pixel(img, static_cast<int>(std::lround(x0 + t * (x1 - x0))),
              static_cast<int>(std::lround(y0 + t * (y1 - y0))), r, g, b);
  }
}

std::string format_tick(double v) {
  std::ostringstream os;
  if (std::abs(v) >= 1000 || (std::abs(v) < 0.01 && v != 0.0)) {
    os.precision(1);
    os << std::scientific << v;
  } else {
    os.precision(3);
    os << v;
  }
  return os.str();
}

}  // namespace

ImageU8 render_line_chart(const std::vector<PlotSeries>& series, const std::string& x_label,
                          const std::string& y_label, int width, int height) {
  if (series.empty()) throw std::invalid_argument("render_line_chart: no series");
  ImageU8 img = ImageU8::filled(width, height, 255);

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size() || s.x.empty())
      throw std::invalid_argument("render_line_chart: malformed series");
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const int ml = 64, mr = 20, mt = 20, mb = 48;
  const int pw = width - ml - mr, ph = height - mt - mb;
  auto to_px = [&](double x, double y) {
    return std::pair<double, double>{ml + (x - xmin) / (xmax - xmin) * pw,
                                     mt + (1.0 - (y - ymin) / (ymax - ymin)) * ph};
  };

  // Axes and ticks.
  draw_line(img, ml, mt, ml, mt + ph, 0, 0, 0);
  draw_line(img, ml, mt + ph, ml + pw, mt + ph, 0, 0, 0);
  for (int t = 0; t <= 4; ++t) {
    const double xv = xmin + (xmax - xmin) * t / 4.0;
    const double yv = ymin + (ymax - ymin) * t / 4.0;
    auto [xp, yb] = to_px(xv, ymin);
    draw_line(img, xp, mt + ph, xp, mt + ph + 4, 0, 0, 0);
    draw_text(img, static_cast<int>(xp) - 12, mt + ph + 8, format_tick(xv));
    auto [xl, yp] = to_px(xmin, yv);
    draw_line(img, ml - 4, yp, ml, yp, 0, 0, 0);
    draw_text(img, 4, static_cast<int>(yp) - 3, format_tick(yv));
    (void)yb;
    (void)xl;
  }
  draw_text(img, ml + pw / 2 - 3 * static_cast<int>(x_label.size()), height - 14, x_label);
  draw_text(img, 4, 6, y_label);

  const uint8_t palette[][3] = {{200, 40, 40}, {40, 90, 200}, {30, 150, 60}, {150, 60, 180}};
  for (size_t si = 0; si < series.size(); ++si) {
    const auto* col = palette[si % 4];
    const auto& s = series[si];
    for (size_t i = 0; i + 1 < s.x.size(); ++i) {
      auto [x0, y0] = to_px(s.x[i], s.y[i]);
      auto [x1, y1] = to_px(s.x[i + 1], s.y[i + 1]);
      draw_line(img, x0, y0, x1, y1, col[0], col[1], col[2]);
    }
    for (size_t i = 0; i < s.x.size(); ++i) {
      auto [xp, yp] = to_px(s.x[i], s.y[i]);
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx)
          if (dx * dx + dy * dy <= 4)
            put_pixel(img, static_cast<int>(xp) + dx, static_cast<int>(yp) + dy, col[0], col[1],
                      col[2]);
    }
    draw_text(img, ml + 8, mt + 8 + 10 * static_cast<int>(si), s.label, col[0], col[1], col[2]);
  }
  return img;
}

void save_line_chart(const std::string& path, const std::vector<PlotSeries>& series,
                     const std::string& x_label, const std::string& y_label) {
  write_png(path, render_line_chart(series, x_label, y_label));
}

}  // namespace alignps
