#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "cloak/detector.hpp"

namespace cloak::testing {

struct GradientCheck {
  int pixels = 0;
  int within_tolerance = 0;
  double worst_relative_error = 0.0;
};

// Central differences of the mean cross-entropy w.r.t. `pixels` randomly
// chosen pixel values (image kept inside [0,1] by choosing interior values).
inline GradientCheck check_gradient(const Detector& det, const Image& image, int target, int pixels, double step,
                                    double tolerance, std::uint64_t seed) {
  const auto proposals = det.propose(image);
  const LossGradient analytic = det.loss_and_gradient(image, proposals, target);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, image.size() - 1);
  GradientCheck out;
  for (int n = 0; n < pixels; ++n) {
    std::size_t idx = pick(rng);
    while (image.data()[idx] < step || image.data()[idx] > 1.0 - step) idx = pick(rng);
    Image plus = image, minus = image;
    plus.data()[idx] += step;
    minus.data()[idx] -= step;
    const double fd = (det.loss_and_gradient(plus, proposals, target).loss -
                       det.loss_and_gradient(minus, proposals, target).loss) /
                      (2.0 * step);
    const double an = analytic.gradient.data()[idx];
    const double scale = std::max({std::abs(fd), std::abs(an), 1e-12});
    const double rel = std::abs(fd - an) / scale;
    out.worst_relative_error = std::max(out.worst_relative_error, rel);
    ++out.pixels;
    out.within_tolerance += rel < tolerance;
  }
  return out;
}

}  // namespace cloak::testing
