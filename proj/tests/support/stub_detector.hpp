#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cloak/detector.hpp"

namespace cloak::testing {

// Analytic two-stage detector for attack tests. Proposals are a fixed list;
// for each proposal the per-channel mean m_c inside the box drives the logits
// z_0 = 0 (background) and z_{c+1} = gain * (m_c - 0.5). A box whose red mean
// is high reads as "red", and so on; a dark image detects nothing.
class StubDetector final : public Detector {
 public:
  explicit StubDetector(std::vector<Box> boxes, double gain = 12.0) : boxes_(std::move(boxes)), gain_(gain) {}

  const std::vector<std::string>& category_names() const override { return names_; }
  int background_index() const override { return 0; }

  std::vector<Proposal> propose(const Image&) const override {
    std::vector<Proposal> out;
    for (const auto& b : boxes_) out.push_back({b, 1.0});
    return out;
  }

  ScoreMatrix classify(const Image& image, std::span<const Proposal> proposals) const override {
    ScoreMatrix s(static_cast<int>(proposals.size()), names_);
    for (int j = 0; j < s.rows(); ++j) {
      const auto p = probabilities(means(image, proposals[j].box));
      for (int k = 0; k < 4; ++k) s.at(j, k) = p[k];
    }
    return s;
  }

  LossGradient loss_and_gradient(const Image& image, std::span<const Proposal> proposals,
                                 int target) const override {
    LossGradient out;
    out.gradient = Image(image.height(), image.width());
    out.scores = classify(image, proposals);
    const double m = static_cast<double>(proposals.size());
    for (int j = 0; j < out.scores.rows(); ++j) {
      const auto p = probabilities(means(image, proposals[j].box));
      out.loss -= std::log(p[target]) / m;
      const Box& b = proposals[j].box;
      const double area = b.area();
      for (int c = 0; c < 3; ++c) {
        // d(-log p_t)/d z_{c+1} = p_{c+1} - [t == c+1]; dz/dm = gain; dm/dpixel = 1/area.
        const double dz = p[c + 1] - (target == c + 1 ? 1.0 : 0.0);
        const double g = dz * gain_ / area / m;
        for (int y = static_cast<int>(b.y_min); y < static_cast<int>(b.y_max); ++y)
          for (int x = static_cast<int>(b.x_min); x < static_cast<int>(b.x_max); ++x) out.gradient.at(y, x, c) += g;
      }
    }
    return out;
  }

 private:
  static std::vector<double> means(const Image& image, const Box& b) {
    std::vector<double> m(3, 0.0);
    for (int y = static_cast<int>(b.y_min); y < static_cast<int>(b.y_max); ++y)
      for (int x = static_cast<int>(b.x_min); x < static_cast<int>(b.x_max); ++x)
        for (int c = 0; c < 3; ++c) m[c] += image.at(y, x, c);
    for (double& v : m) v /= b.area();
    return m;
  }

  std::vector<double> probabilities(const std::vector<double>& m) const {
    std::vector<double> z{0.0, gain_ * (m[0] - 0.5), gain_ * (m[1] - 0.5), gain_ * (m[2] - 0.5)};
    const double top = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) sum += (v = std::exp(v - top));
    for (double& v : z) v /= sum;
    return z;
  }

  std::vector<std::string> names_{"background", "red", "green", "blue"};
  std::vector<Box> boxes_;
  double gain_;
};

// Dark 32x32 canvas with a saturated patch of channel `c` at each box.
inline Image stub_scene(const std::vector<std::pair<Box, int>>& patches) {
  Image img(32, 32, 26.0 / 255);
  for (const auto& [b, c] : patches)
    for (int y = static_cast<int>(b.y_min); y < static_cast<int>(b.y_max); ++y)
      for (int x = static_cast<int>(b.x_min); x < static_cast<int>(b.x_max); ++x) img.at(y, x, c) = 242.0 / 255;
  return img;
}

}  // namespace cloak::testing
