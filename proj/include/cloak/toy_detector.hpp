#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cloak/detector.hpp"
#include "cloak/kernels.hpp"
#include "cloak/scene.hpp"

namespace cloak {

struct ToyDetectorConfig {
  int conv1_channels = 8;
  int conv2_channels = 12;
  int roi_grid = 7;
  int hidden_units = 48;
  int objectness_hidden = 16;
  int max_proposals = 4096;
  double proposal_nms_iou = 1.0;
  int min_window = 10;
  int max_window = 30;
  int window_step = 4;
  int window_stride = 4;
  // Added in quadrature to the image standard deviation during input
  // normalisation; keeps flat images finite and limits the input gain on
  // low-contrast images.
  double norm_floor = 0.3;
  // Each RoI is sampled over its box grown by this fraction of its size on
  // every side, so the head sees whether a shape continues past the box.
  double roi_context = 0.25;
  // Windows scoring below this objectness are never proposed.
  double min_objectness = 0.0;
};

struct TrainConfig {
  std::uint64_t seed = 7;
  int objectness_epochs = 30;
  int classifier_epochs = 24;
  double learning_rate = 2e-3;
  int jittered_positives = 6;        // extra positive RoIs per ground-truth box
  int negatives_per_image = 64;      // proposals kept as background per image
  int negative_pool = 96;            // ...drawn from this many highest-objectness background proposals
  int hard_negatives = 4;            // partially overlapping background RoIs per ground-truth box
  double foreground_iou = 0.5;
  // After the first third of classifier training, each image also contributes
  // background RoIs from a copy pushed 1..adversarial_steps signed-gradient
  // steps of adversarial_step toward a random object category (0 = off).
  int adversarial_steps = 4;
  int adversarial_negatives = 64;
  double adversarial_step = 4.0 / 255.0;
};

class ToyDetector;

// Sliding-window objectness stage followed by a convolutional backbone,
// bilinear RoI sampling and a two-layer classification head. Category 0 is
// background.
class ToyDetector final : public Detector {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  ToyDetector(ToyDetectorConfig config, std::vector<std::string> category_names);

  // Trains both stages. Annotation categories index `category_names`
  // (background at 0); at least two object categories must be present.
  static ToyDetector train(std::span<const LabeledImage> corpus, std::vector<std::string> category_names,
                           const ToyDetectorConfig& config, const TrainConfig& train_config);

  static ToyDetector load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const std::vector<std::string>& category_names() const override { return names_; }
  int background_index() const override { return 0; }
  int min_image_side() const override { return 16; }

  std::vector<Proposal> propose(const Image& image) const override;
  ScoreMatrix classify(const Image& image, std::span<const Proposal> proposals) const override;
  LossGradient loss_and_gradient(const Image& image, std::span<const Proposal> proposals,
                                 int target_label) const override;

  const ToyDetectorConfig& config() const noexcept { return config_; }
  void set_backend(kernels::Backend backend) noexcept { backend_ = backend; }
  kernels::Backend backend() const noexcept { return backend_; }

  // Number of propose() calls made on this instance (test instrumentation).
  std::size_t propose_calls() const noexcept { return propose_calls_->load(); }

  std::span<const double> parameters() const noexcept { return params_; }

  struct Layout;

 private:
  friend struct ToyDetectorTrainer;

  ToyDetectorConfig config_;
  std::vector<std::string> names_;
  std::vector<double> params_;            // backbone + head
  std::vector<double> objectness_params_; // window-feature MLP
  std::vector<double> feature_shift_;     // objectness feature standardisation
  std::vector<double> feature_scale_;
  kernels::Backend backend_ = kernels::Backend::kParallel;
  std::shared_ptr<std::atomic<std::size_t>> propose_calls_ = std::make_shared<std::atomic<std::size_t>>(0);
};

}  // namespace cloak
