#include "cloak/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cloak/errors.hpp"

namespace cloak {
namespace {

constexpr int kSupersample = 4;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull ^ (b + 0x632BE59BD9B4E019ull + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

bool inside(const ShapeSpec& s, double px, double py) {
  const double half = s.size / 2.0;
  const double cx = s.x + half, cy = s.y + half;
  switch (s.kind) {
    case ShapeKind::kSquare:
      return px >= s.x && px < s.x + s.size && py >= s.y && py < s.y + s.size;
    case ShapeKind::kCircle:
      return (px - cx) * (px - cx) + (py - cy) * (py - cy) < half * half;
    case ShapeKind::kTriangle: {
      // Apex at top centre, base along the bottom edge.
      if (py < s.y || py >= s.y + s.size) return false;
      const double t = (py - s.y) / s.size;
      return std::abs(px - cx) <= t * half;
    }
  }
  return false;
}

}  // namespace

const std::vector<std::string>& toy_category_names() {
  static const std::vector<std::string> names{"background", "circle", "square", "triangle"};
  return names;
}

int category_of(ShapeKind kind) noexcept { return static_cast<int>(kind) + 1; }

std::string to_string(ShapeKind kind) { return toy_category_names()[category_of(kind)]; }

LabeledImage generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  if (spec.width < 16 || spec.height < 16) throw InvalidInput("scene canvas must be at least 16x16");
  for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
    const auto& s = spec.shapes[i];
    if (s.size < 4 || s.x < 0 || s.y < 0 || s.x + s.size > spec.width || s.y + s.size > spec.height) {
      throw GenerationError("shape " + std::to_string(i) + " does not fit on the canvas");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (iou(s.box(), spec.shapes[j].box()) > kMaxShapeOverlapIou) {
        throw GenerationError("shapes " + std::to_string(j) + " and " + std::to_string(i) + " overlap above IoU 0.2");
      }
    }
  }

  std::mt19937_64 rng(mix(spec.background_seed, seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<double, 3> base{};
  for (auto& v : base) v = 0.2 + 0.6 * unit(rng);

  // Low-frequency texture: a few oriented sinusoids per channel plus fine grain.
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<std::array<Wave, 3>, 3> waves{};
  for (auto& channel : waves) {
    for (auto& w : channel) {
      const double angle = 2.0 * std::numbers::pi * unit(rng);
      const double freq = (0.5 + 2.5 * unit(rng)) * 2.0 * std::numbers::pi / spec.width;
      w = Wave{freq * std::cos(angle), freq * std::sin(angle), 2.0 * std::numbers::pi * unit(rng),
               0.02 + 0.04 * unit(rng)};
    }
  }

  LabeledImage out{Image(spec.height, spec.width), {}};
  Image& img = out.image;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = base[c];
        for (const auto& w : waves[c]) v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
        v += 0.04 * (unit(rng) - 0.5);
        img.at(y, x, c) = v;
      }
    }
  }

  for (const auto& s : spec.shapes) {
    for (int y = s.y; y < s.y + s.size; ++y) {
      for (int x = s.x; x < s.x + s.size; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSupersample; ++sy) {
          for (int sx = 0; sx < kSupersample; ++sx) {
            hits += inside(s, x + (sx + 0.5) / kSupersample, y + (sy + 0.5) / kSupersample) ? 1 : 0;
          }
        }
        if (hits == 0) continue;
        const double cover = static_cast<double>(hits) / (kSupersample * kSupersample);
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = (1.0 - cover) * img.at(y, x, c) + cover * s.color[c];
      }
    }
    out.annotations.push_back(Annotation{s.box(), category_of(s.kind)});
  }
  img = quantize(img, 255);
  return out;
}

SceneSpec random_scene_spec(const SceneOptions& options, std::uint64_t seed) {
  if (options.min_shapes < 0 || options.max_shapes < options.min_shapes) throw InvalidInput("bad shape count range");
  if (options.min_size < 4 || options.max_size < options.min_size) throw InvalidInput("bad shape size range");
  std::mt19937_64 rng(mix(seed, 0x5CE11Eull));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SceneSpec spec;
  spec.width = options.width;
  spec.height = options.height;
  spec.background_seed = seed;

  // The background base colour is drawn first from the same stream that
  // generate_scene uses, so shape colours can keep their distance from it.
  std::mt19937_64 bg_rng(mix(spec.background_seed, seed));
  std::array<double, 3> base{};
  for (auto& v : base) v = 0.2 + 0.6 * unit(bg_rng);

  const int count = std::uniform_int_distribution<int>(options.min_shapes, options.max_shapes)(rng);
  for (int n = 0; n < count; ++n) {
    ShapeSpec shape;
    shape.kind = static_cast<ShapeKind>(std::uniform_int_distribution<int>(0, kShapeKindCount - 1)(rng));
    do {
      for (auto& v : shape.color) v = unit(rng);
    } while (std::hypot(shape.color[0] - base[0], shape.color[1] - base[1], shape.color[2] - base[2]) <
             options.min_color_distance);

    bool placed = false;
    for (int attempt = 0; attempt < options.placement_attempts && !placed; ++attempt) {
      shape.size = std::uniform_int_distribution<int>(options.min_size, options.max_size)(rng);
      if (shape.size > options.width || shape.size > options.height) continue;
      shape.x = std::uniform_int_distribution<int>(0, options.width - shape.size)(rng);
      shape.y = std::uniform_int_distribution<int>(0, options.height - shape.size)(rng);
      placed = std::all_of(spec.shapes.begin(), spec.shapes.end(), [&](const ShapeSpec& other) {
        return iou(shape.box(), other.box()) <= kMaxShapeOverlapIou;
      });
    }
    if (!placed) throw GenerationError("could not place shape " + std::to_string(n) + " without exceeding overlap limit");
    spec.shapes.push_back(shape);
  }
  return spec;
}

std::vector<LabeledImage> make_corpus(const SceneOptions& options, std::uint64_t first_seed, int count) {
  std::vector<LabeledImage> corpus;
  corpus.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(i);
    corpus.push_back(generate_scene(random_scene_spec(options, seed), seed));
  }
  return corpus;
}

}  // namespace cloak
