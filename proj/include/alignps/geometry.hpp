// Axis-aligned boxes in xyxy pixel coordinates and greedy NMS.
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

namespace alignps {

struct BoxF {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  BoxF clipped(double w, double h) const {
    return {std::clamp(x1, 0.0, w), std::clamp(y1, 0.0, h), std::clamp(x2, 0.0, w),
            std::clamp(y2, 0.0, h)};
  }

  bool contains(double x, double y) const { return x >= x1 && x <= x2 && y >= y1 && y <= y2; }
};

inline double iou(const BoxF& a, const BoxF& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Greedy NMS. Candidates are ranked by (score desc, index asc); returns the
// surviving candidate indices in that order, at most max_det of them.
inline std::vector<int> nms(const std::vector<BoxF>& boxes, const std::vector<double>& scores,
                            double iou_thresh, int max_det = -1) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<int> keep;
  std::vector<char> removed(boxes.size(), 0);
  for (size_t i = 0; i < order.size(); ++i) {
    const int a = order[i];
    if (removed[a]) continue;
    keep.push_back(a);
    if (max_det >= 0 && static_cast<int>(keep.size()) >= max_det) break;
    for (size_t j = i + 1; j < order.size(); ++j) {
      const int b = order[j];
      if (!removed[b] && iou(boxes[a], boxes[b]) > iou_thresh) removed[b] = 1;
    }
  }
  return keep;
}

}  // namespace alignps
