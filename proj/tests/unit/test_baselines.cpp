#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cloak/baselines.hpp"
#include "cloak/errors.hpp"
#include "cloak/image_io.hpp"
#include "cloak/metrics.hpp"
#include "cloak/scene.hpp"
#include "support/fixtures.hpp"

using namespace cloak;

namespace {

const Image& scene_image() {
  static const Image img = make_corpus(SceneOptions{}, 77, 1).front().image;
  return img;
}

}  // namespace

TEST_SUITE("baselines") {
  TEST_CASE("method names round trip") {
    for (const auto& spec : default_baselines()) {
      CHECK(baseline_method_from_string(to_string(spec.method)) == spec.method);
      CHECK_NOTHROW(spec.validate());
    }
    CHECK_THROWS_AS(baseline_method_from_string("sepia"), InvalidInput);
  }

  TEST_CASE("parameter validation") {
    CHECK_THROWS_AS(apply_baseline(scene_image(), {BaselineMethod::kLowBrightness, 1.5, 0}), InvalidInput);
    CHECK_THROWS_AS(apply_baseline(scene_image(), {BaselineMethod::kGaussianBlur, 0.0, 0}), InvalidInput);
    CHECK_THROWS_AS(apply_baseline(scene_image(), {BaselineMethod::kMosaic, 2.5, 0}), InvalidInput);
    CHECK_THROWS_AS(apply_baseline(scene_image(), {BaselineMethod::kAdditiveNoise, -0.1, 0}), InvalidInput);
    CHECK_THROWS_AS(apply_baseline(scene_image(), {BaselineMethod::kJpegCompression, 101, 0}), InvalidInput);
  }

  TEST_CASE("low brightness scales every pixel") {
    const Image out = apply_baseline(scene_image(), {BaselineMethod::kLowBrightness, 0.1, 0});
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == scene_image().data()[i] * 0.1);
  }

  TEST_CASE("gaussian kernel is normalised with radius ceil(3 sigma)") {
    for (double sigma : {0.5, 1.0, 3.0}) {
      const auto k = gaussian_kernel(sigma);
      CHECK(k.size() == 2 * static_cast<std::size_t>(std::ceil(3 * sigma)) + 1);
      CHECK(std::accumulate(k.begin(), k.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(k[k.size() / 2] == *std::max_element(k.begin(), k.end()));
    }
  }

  TEST_CASE("blur keeps a constant image constant") {
    const Image flat(20, 20, 0.4);
    const Image out = apply_baseline(flat, {BaselineMethod::kGaussianBlur, 2.0, 0});
    for (double v : out.data()) CHECK(v == doctest::Approx(0.4).epsilon(1e-12));
  }

  TEST_CASE("mosaic tiles hold the block mean, including partial edge tiles") {
    Image img(5, 5);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = (y * 5 + x) / 24.0;
    const Image out = apply_baseline(img, {BaselineMethod::kMosaic, 4, 0});
    // Top-left 4x4 tile: values 0..3, 5..8, 10..13, 15..18 -> mean 9/24.
    CHECK(out.at(0, 0, 0) == doctest::Approx(9.0 / 24.0));
    CHECK(out.at(3, 3, 2) == doctest::Approx(9.0 / 24.0));
    // Right edge column tile x=4, y=0..3: values 4, 9, 14, 19 -> 11.5/24.
    CHECK(out.at(2, 4, 1) == doctest::Approx(11.5 / 24.0));
    // Corner tile is the single pixel 24/24.
    CHECK(out.at(4, 4, 0) == doctest::Approx(1.0));
  }

  TEST_CASE("additive noise is seeded and stays in range") {
    const BaselineSpec spec{BaselineMethod::kAdditiveNoise, 0.2, 42};
    const Image a = apply_baseline(scene_image(), spec), b = apply_baseline(scene_image(), spec);
    CHECK(a == b);
    CHECK_FALSE(a == apply_baseline(scene_image(), {BaselineMethod::kAdditiveNoise, 0.2, 43}));
    for (double v : a.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }

  TEST_CASE("JPEG round trip: quality orders the distortion") {
    const Image& img = scene_image();
    const Image q100 = jpeg_round_trip(img, 100), q50 = jpeg_round_trip(img, 50), q10 = jpeg_round_trip(img, 10);
    CHECK(q100.same_shape(img));
    CHECK(psnr(img, q100) > 30.0);
    CHECK(psnr(img, q10) < psnr(img, q50));
    CHECK(psnr(img, q50) < psnr(img, q100));
    // A flat grey image survives almost exactly.
    const Image flat(16, 16, 128.0 / 255.0);
    CHECK(linf_distance(jpeg_round_trip(flat, 90), flat) <= 1.0 / 255.0 + 1e-12);
    for (double v : q10.data()) CHECK(v * 255 == std::round(v * 255));
  }

  TEST_CASE("outputs keep shape and range for every default baseline") {
    for (const auto& spec : default_baselines()) {
      const Image out = apply_baseline(scene_image(), spec);
      CHECK(out.same_shape(scene_image()));
      CHECK_NOTHROW(validate_image(out));
    }
  }
}
