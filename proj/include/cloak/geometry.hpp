#pragma once

#include <string>
#include <vector>

namespace cloak {

// Axis-aligned box in pixel-edge coordinates: a pixel (x, y) spans
// [x, x+1) x [y, y+1).
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() > 0 && height() > 0 ? width() * height() : 0.0; }
  bool valid() const noexcept { return x_min < x_max && y_min < y_max; }
  Box clipped(double width, double height) const noexcept;

  bool operator==(const Box&) const = default;
};

double iou(const Box& a, const Box& b) noexcept;

struct Proposal {
  Box box;
  double objectness = 0.0;

  bool operator==(const Proposal&) const = default;
};

struct Detection {
  Box box;
  int category = 0;
  double score = 0.0;

  bool operator==(const Detection&) const = default;
};

struct Annotation {
  Box box;
  int category = 0;

  bool operator==(const Annotation&) const = default;
};

// Greedy non-maximum suppression over detections already sorted by
// descending score. Keeps a box unless it overlaps a kept box with IoU
// strictly above `iou_threshold`.
std::vector<Detection> non_max_suppression(const std::vector<Detection>& sorted, double iou_threshold);

}  // namespace cloak
