#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "cloak/errors.hpp"
#include "cloak/image_io.hpp"
#include "cloak/scene.hpp"
#include "cloak/toy_detector.hpp"
#include "support/fixtures.hpp"
#include "support/gradient_check.hpp"

using namespace cloak;
using cloak::testing::bundled_detector;

namespace {

LabeledImage small_scene(std::uint64_t seed) {
  SceneOptions o;
  o.width = o.height = 32;
  o.max_shapes = 1;
  o.max_size = 18;
  return make_corpus(o, seed, 1).front();
}

}  // namespace

TEST_SUITE("detector") {
  TEST_CASE("bundled checkpoint shape") {
    const auto& det = bundled_detector();
    CHECK(det.category_names() == toy_category_names());
    CHECK(det.background_index() == 0);
    CHECK(det.category_count() == 4);
  }

  TEST_CASE("proposals are sorted, inside the image and capped") {
    const auto& det = bundled_detector();
    const auto scene = make_corpus(SceneOptions{}, 31, 1).front();
    const auto props = det.propose(scene.image);
    REQUIRE_FALSE(props.empty());
    CHECK(static_cast<int>(props.size()) <= det.config().max_proposals);
    for (std::size_t i = 0; i < props.size(); ++i) {
      CHECK(props[i].box.valid());
      CHECK(props[i].box.x_min >= 0);
      CHECK(props[i].box.y_max <= 64);
      if (i) CHECK(props[i - 1].objectness >= props[i].objectness);
    }
  }

  TEST_CASE("score rows are distributions and duplicated proposals score identically") {
    const auto& det = bundled_detector();
    const auto scene = make_corpus(SceneOptions{}, 32, 1).front();
    auto props = det.propose(scene.image);
    props.push_back(props.front());
    const ScoreMatrix s = det.classify(scene.image, props);
    REQUIRE(s.rows() == static_cast<int>(props.size()));
    for (int j = 0; j < s.rows(); ++j) {
      const auto row = s.row(j);
      CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
      for (double v : row) CHECK(v >= 0.0);
    }
    const auto first = s.row(0), last = s.row(s.rows() - 1);
    CHECK(std::equal(first.begin(), first.end(), last.begin()));
  }

  TEST_CASE("classification and loss are deterministic and backend-independent") {
    ToyDetector det = bundled_detector();
    const auto scene = make_corpus(SceneOptions{}, 33, 1).front();
    const auto props = det.propose(scene.image);
    det.set_backend(kernels::Backend::kSerial);
    const auto serial = det.loss_and_gradient(scene.image, props, 0);
    det.set_backend(kernels::Backend::kParallel);
    const auto parallel = det.loss_and_gradient(scene.image, props, 0);
    CHECK(serial.loss == parallel.loss);
    CHECK(serial.gradient == parallel.gradient);
    CHECK(serial.scores == parallel.scores);
    CHECK(det.classify(scene.image, props) == parallel.scores);
  }

  TEST_CASE("the loss matches the score matrix it reports") {
    const auto& det = bundled_detector();
    const auto scene = make_corpus(SceneOptions{}, 34, 1).front();
    const auto props = det.propose(scene.image);
    for (int target = 0; target < 4; ++target) {
      const auto lg = det.loss_and_gradient(scene.image, props, target);
      double expected = 0.0;
      for (int j = 0; j < lg.scores.rows(); ++j) expected -= std::log(lg.scores.at(j, target));
      CHECK(lg.loss == doctest::Approx(expected / lg.scores.rows()).epsilon(1e-12));
    }
  }

  TEST_CASE("input gradient agrees with central differences") {
    const auto& det = bundled_detector();
    int good = 0, total = 0;
    for (std::uint64_t seed : {5u, 6u}) {
      const auto scene = small_scene(seed);
      const auto r = testing::check_gradient(det, scene.image, static_cast<int>(seed % 4), 50, 1e-3, 1e-3, seed);
      good += r.within_tolerance;
      total += r.pixels;
    }
    CHECK(total == 100);
    CHECK(good >= 99);
  }

  TEST_CASE("detections on a held-out scene match its ground truth") {
    const auto& det = bundled_detector();
    int hits = 0, total = 0;
    for (const auto& scene : make_corpus(SceneOptions{}, 950000, 20)) {
      const auto dets = det.detect(scene.image, 0.3);
      for (const auto& a : scene.annotations) {
        ++total;
        hits += std::any_of(dets.begin(), dets.end(),
                            [&](const Detection& d) { return d.category == a.category && iou(d.box, a.box) >= 0.5; });
      }
    }
    CHECK(hits >= 0.85 * total);
  }

  TEST_CASE("checkpoint save/load round trip and corrupt files") {
    const auto& det = bundled_detector();
    const auto dir = testing::scratch_dir("ckpt");
    det.save(dir / "d.ckpt");
    const ToyDetector copy = ToyDetector::load(dir / "d.ckpt");
    CHECK(std::equal(copy.parameters().begin(), copy.parameters().end(), det.parameters().begin(),
                     det.parameters().end()));
    const auto scene = make_corpus(SceneOptions{}, 35, 1).front();
    CHECK(copy.detect(scene.image, 0.3) == det.detect(scene.image, 0.3));

    CHECK_THROWS_AS(ToyDetector::load(dir / "missing.ckpt"), LoadError);
    std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
    CHECK_THROWS_AS(ToyDetector::load(dir / "junk.ckpt"), LoadError);

    auto bytes = read_file_bytes(dir / "d.ckpt");
    bytes[8] = 99;  // format version
    std::ofstream(dir / "v.ckpt", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    CHECK_THROWS_AS(ToyDetector::load(dir / "v.ckpt"), VersionError);

    bytes = read_file_bytes(dir / "d.ckpt");
    bytes.resize(bytes.size() - 100);
    std::ofstream(dir / "t.ckpt", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    CHECK_THROWS_AS(ToyDetector::load(dir / "t.ckpt"), LoadError);
  }

  TEST_CASE("tiny or out-of-range images are rejected") {
    const auto& det = bundled_detector();
    CHECK_THROWS_AS(det.propose(Image(12, 64, 0.5)), InvalidInput);
    Image bad(32, 32, 0.5);
    bad.at(1, 1, 1) = 1.5;
    CHECK_THROWS_AS(det.detect(bad, 0.3), InvalidInput);
  }
}

TEST_SUITE("scene") {
  TEST_CASE("generation is deterministic and on the 8-bit grid") {
    const auto a = make_corpus(SceneOptions{}, 123, 3), b = make_corpus(SceneOptions{}, 123, 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(a[i].image == b[i].image);
      CHECK(a[i].annotations == b[i].annotations);
      for (double v : a[i].image.data()) CHECK(v * 255 == std::round(v * 255));
    }
    CHECK_FALSE(make_corpus(SceneOptions{}, 124, 1)[0].image == a[0].image);
  }

  TEST_CASE("annotations mirror the spec and respect the overlap limit") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const SceneSpec spec = random_scene_spec(SceneOptions{}, seed);
      const auto scene = generate_scene(spec, seed);
      REQUIRE(scene.annotations.size() == spec.shapes.size());
      for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
        CHECK(scene.annotations[i].box == spec.shapes[i].box());
        CHECK(scene.annotations[i].category == category_of(spec.shapes[i].kind));
        for (std::size_t j = 0; j < i; ++j) CHECK(iou(spec.shapes[i].box(), spec.shapes[j].box()) <= kMaxShapeOverlapIou);
      }
    }
  }

  TEST_CASE("invalid specs are rejected") {
    SceneSpec spec;
    spec.shapes.push_back(ShapeSpec{ShapeKind::kSquare, {1, 0, 0}, 56, 10, 16});
    CHECK_THROWS_AS(generate_scene(spec, 1), GenerationError);
    spec.shapes = {ShapeSpec{ShapeKind::kSquare, {1, 0, 0}, 10, 10, 16}, ShapeSpec{ShapeKind::kCircle, {0, 1, 0}, 12, 12, 16}};
    CHECK_THROWS_AS(generate_scene(spec, 1), GenerationError);
    spec.width = 8;
    CHECK_THROWS_AS(generate_scene(spec, 1), InvalidInput);
  }
}
