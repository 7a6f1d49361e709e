// Minimal PNG line charts for metric sweeps.
#pragma once

#include <string>
#include <vector>

#include "alignps/image.hpp"

namespace alignps {

struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

// Renders axes, ticks and one polyline per series to an RGB image.
ImageU8 render_line_chart(const std::vector<PlotSeries>& series, const std::string& x_label,
                          const std::string& y_label, int width = 640, int height = 480);

void save_line_chart(const std::string& path, const std::vector<PlotSeries>& series,
                     const std::string& x_label, const std::string& y_label);

}  // namespace alignps
