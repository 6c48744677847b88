#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cloak {

// H x W x 3 image with interleaved channels, intensities on the [0,1] scale.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, double fill = 0.0);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  double& at(int y, int x, int c) noexcept {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }
  double at(int y, int x, int c) const noexcept {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * kChannels + c];
  }

  std::span<double> data() noexcept { return pixels_; }
  std::span<const double> data() const noexcept { return pixels_; }

  bool same_shape(const Image& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  bool operator==(const Image& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

// Throws InvalidInput unless every pixel lies in [0,1] and both sides are
// at least `min_side`.
void validate_image(const Image& image, int min_side = 16);

// Largest absolute per-pixel difference. Throws InvalidInput on shape mismatch.
double linf_distance(const Image& a, const Image& b);

// Rounds every pixel to the nearest k/levels value (levels = 255 or 65535).
Image quantize(const Image& image, int levels);

}  // namespace cloak
