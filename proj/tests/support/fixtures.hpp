#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "cloak/image.hpp"
#include "cloak/toy_detector.hpp"

namespace cloak::testing {

// The detector checkpoint shipped in models/.
inline const ToyDetector& bundled_detector() {
  static const ToyDetector detector = ToyDetector::load(CLOAK_MODEL_PATH);
  return detector;
}

inline std::filesystem::path repo_path(const std::string& relative) {
  return std::filesystem::path(CLOAK_SOURCE_DIR) / relative;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("cloak_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Image random_image(int height, int width, std::uint64_t seed) {
  Image img(height, width);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double& v : img.data()) v = unit(rng);
  return img;
}

}  // namespace cloak::testing
