#include "cloak/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cloak/errors.hpp"

namespace cloak {

Image::Image(int height, int width, double fill)
    : height_(height), width_(width) {
  if (height < 0 || width < 0) throw InvalidInput("image dimensions must be non-negative");
  pixels_.assign(static_cast<std::size_t>(height) * width * kChannels, fill);
}

void validate_image(const Image& image, int min_side) {
  if (image.height() < min_side || image.width() < min_side) {
    throw InvalidInput("image is " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                       ", minimum side is " + std::to_string(min_side));
  }
  for (double v : image.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("pixel value outside [0,1]");
  }
}

double linf_distance(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw InvalidInput("linf_distance: shape mismatch");
  double worst = 0.0;
  auto pa = a.data();
  auto pb = b.data();
  for (std::size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, std::abs(pa[i] - pb[i]));
  return worst;
}

Image quantize(const Image& image, int levels) {
  Image out = image;
  const double scale = static_cast<double>(levels);
  for (double& v : out.data()) {
    const double level = std::round(std::clamp(v, 0.0, 1.0) * scale);
    v = level / scale;
  }
  return out;
}

}  // namespace cloak
