#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cloak/image.hpp"

namespace cloak {

// Traditional image-processing privacy treatments used as comparison points.
enum class BaselineMethod { kLowBrightness, kGaussianBlur, kMosaic, kAdditiveNoise, kJpegCompression };

std::string to_string(BaselineMethod method);
BaselineMethod baseline_method_from_string(const std::string& name);

struct BaselineSpec {
  BaselineMethod method = BaselineMethod::kLowBrightness;
  // brightness factor | blur sigma | mosaic block size | noise sigma | JPEG quality
  double parameter = 0.1;
  std::uint64_t seed = 0;  // additive noise only

  void validate() const;
  static BaselineSpec defaults(BaselineMethod method);

  bool operator==(const BaselineSpec&) const = default;
};

// The five methods with their default parameters.
std::vector<BaselineSpec> default_baselines();

Image apply_baseline(const Image& image, const BaselineSpec& spec);

// Normalised 1-D Gaussian taps for radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

// Round trip through the system JPEG codec at the given quality.
Image jpeg_round_trip(const Image& image, int quality);

}  // namespace cloak
