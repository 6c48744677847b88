#include "cloak/geometry.hpp"

#include <algorithm>

namespace cloak {

Box Box::clipped(double width, double height) const noexcept {
  return Box{std::clamp(x_min, 0.0, width), std::clamp(y_min, 0.0, height),
             std::clamp(x_max, 0.0, width), std::clamp(y_max, 0.0, height)};
}

double iou(const Box& a, const Box& b) noexcept {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Detection> non_max_suppression(const std::vector<Detection>& sorted, double iou_threshold) {
  std::vector<Detection> kept;
  for (const auto& d : sorted) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (iou(d.box, k.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

}  // namespace cloak
