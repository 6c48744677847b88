#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cloak/geometry.hpp"
#include "cloak/image.hpp"

namespace cloak {

enum class ShapeKind { kCircle = 0, kSquare = 1, kTriangle = 2 };

inline constexpr int kShapeKindCount = 3;

// Category table used by scenes and the toy detector: background first.
const std::vector<std::string>& toy_category_names();
int category_of(ShapeKind kind) noexcept;
std::string to_string(ShapeKind kind);

struct ShapeSpec {
  ShapeKind kind = ShapeKind::kCircle;
  std::array<double, 3> color{1.0, 1.0, 1.0};
  int x = 0;  // left edge of the bounding square
  int y = 0;  // top edge
  int size = 16;

  Box box() const noexcept {
    return Box{static_cast<double>(x), static_cast<double>(y), static_cast<double>(x + size),
               static_cast<double>(y + size)};
  }
};

struct SceneSpec {
  int width = 64;
  int height = 64;
  std::vector<ShapeSpec> shapes;
  std::uint64_t background_seed = 0;
};

inline constexpr double kMaxShapeOverlapIou = 0.2;

struct LabeledImage {
  Image image;
  std::vector<Annotation> annotations;
};

// Renders the scene on the 8-bit grid. Deterministic in (spec, seed).
// Throws GenerationError for shapes outside the canvas or overlapping above the
// 0.2 IoU limit.
LabeledImage generate_scene(const SceneSpec& spec, std::uint64_t seed);

struct SceneOptions {
  int width = 64;
  int height = 64;
  int min_shapes = 1;
  int max_shapes = 3;
  int min_size = 12;
  int max_size = 24;
  int placement_attempts = 200;
  double min_color_distance = 0.35;
};

// Random layout; throws GenerationError when the shapes cannot be placed.
SceneSpec random_scene_spec(const SceneOptions& options, std::uint64_t seed);

// Scenes for seeds first_seed, first_seed + 1, ...
std::vector<LabeledImage> make_corpus(const SceneOptions& options, std::uint64_t first_seed, int count);

}  // namespace cloak
