#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cloak/attack.hpp"
#include "cloak/geometry.hpp"
#include "cloak/image.hpp"
#include "cloak/kernels.hpp"

namespace cloak {

// PSNR in dB; +infinity for identical images. Throws InvalidInput on shape mismatch.
double psnr(const Image& a, const Image& b, double peak = 1.0);

// Mean local SSIM (uniform windows, stride 1, averaged over channels).
// Throws InvalidInput on shape mismatch or when a side is below the window.
double ssim(const Image& a, const Image& b, const kernels::SsimParams& params = {},
            kernels::Backend backend = kernels::Backend::kParallel);

struct MatchCriterion {
  double iou_threshold = 0.5;
  bool require_category_match = true;

  void validate() const;
  bool operator==(const MatchCriterion&) const = default;
};

struct MatchedPair {
  std::size_t detection_index = 0;
  std::size_t ground_truth_index = 0;
  double iou = 0.0;
  bool operator==(const MatchedPair&) const = default;
};

// Greedy one-to-one matching by descending detection score (input order on
// ties). Each ground-truth box is taken at most once, by its best-IoU
// unmatched candidate (lowest index on ties).
std::vector<MatchedPair> match_boxes(std::span<const Detection> detections, std::span<const Annotation> ground_truth,
                                     const MatchCriterion& criterion);

// Per-image record behind every privacy metric.
struct ImageOutcome {
  std::string image_id;
  AttackMode mode = AttackMode::kAll;
  std::vector<Detection> original_detections;
  std::vector<Detection> adversarial_detections;
  std::set<int> sensitive_categories;  // sensitive mode only
  std::optional<std::vector<Annotation>> ground_truth;

  // Throws InvalidInput when the sensitive set does not agree with the mode.
  void validate() const;
  bool operator==(const ImageOutcome&) const = default;
};

// A ratio together with its counts. `degenerate` marks a zero denominator
// (value reported as 0); `presence_fallback` marks a success rate that had to
// use category presence because ground truth was missing for some image.
struct Rate {
  double value = 0.0;
  std::size_t numerator = 0;
  std::size_t denominator = 0;
  bool degenerate = false;
  bool presence_fallback = false;
  bool operator==(const Rate&) const = default;
};

// Share of images with no adversarial detection at all. Throws MetricError
// for an empty input or a non-"all" outcome.
Rate success_rate_all(std::span<const ImageOutcome> outcomes);

// Share of images where no adversarial detection matches a sensitive
// ground-truth box under `criterion`.
Rate success_rate_sensitive(std::span<const ImageOutcome> outcomes, const MatchCriterion& criterion = {});

// Adversarial box count over original box count.
Rate leakage_all(std::span<const ImageOutcome> outcomes);

// Correctly detected sensitive boxes in the adversarial images over those in
// the originals. Throws MetricError when any outcome lacks ground truth.
// With `only_category` set, counts that category alone.
Rate leakage_sensitive(std::span<const ImageOutcome> outcomes, const MatchCriterion& criterion = {},
                       std::optional<int> only_category = std::nullopt);

// Number of detections matching a sensitive ground-truth box (restricted to
// `category` when given).
std::size_t count_sensitive_matches(std::span<const Detection> detections, std::span<const Annotation> ground_truth,
                                    const std::set<int>& sensitive, const MatchCriterion& criterion,
                                    std::optional<int> category = std::nullopt);

// Share of sensitive ground-truth boxes re-detected as `target_category`
// (IoU only) in the adversarial images.
Rate disguise_rate(std::span<const ImageOutcome> outcomes, int target_category, double iou_threshold = 0.5);

}  // namespace cloak
