#pragma once

#include <span>
#include <string>
#include <vector>

#include "cloak/geometry.hpp"
#include "cloak/image.hpp"

namespace cloak {

// m x K matrix of per-proposal category distributions (each row sums to 1).
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  ScoreMatrix(int rows, std::vector<std::string> category_names);

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& category_names() const noexcept { return names_; }

  double& at(int row, int col) noexcept { return values_[static_cast<std::size_t>(row) * cols() + col]; }
  double at(int row, int col) const noexcept { return values_[static_cast<std::size_t>(row) * cols() + col]; }
  std::span<const double> row(int r) const noexcept {
    return std::span<const double>(values_).subspan(static_cast<std::size_t>(r) * cols(), cols());
  }
  std::span<const double> values() const noexcept { return values_; }

  bool operator==(const ScoreMatrix&) const = default;

 private:
  int rows_ = 0;
  std::vector<std::string> names_;
  std::vector<double> values_;
};

struct LossGradient {
  double loss = 0.0;
  Image gradient;       // d loss / d pixel, shaped like the input image
  ScoreMatrix scores;   // the score matrix evaluated at the same image
};

// Two-stage detector contract: a proposal stage followed by a per-proposal
// classifier whose input gradient is available. Implementations must be
// immutable after construction so one instance can be shared across threads.
class Detector {
 public:
  virtual ~Detector() = default;

  virtual const std::vector<std::string>& category_names() const = 0;
  int category_count() const { return static_cast<int>(category_names().size()); }
  // Index of the non-object column, or -1 when the model has none.
  virtual int background_index() const { return -1; }
  virtual int min_image_side() const { return 16; }

  // Region proposals sorted by descending objectness.
  virtual std::vector<Proposal> propose(const Image& image) const = 0;
  // Per-proposal category distributions. Never re-runs the proposal stage.
  virtual ScoreMatrix classify(const Image& image, std::span<const Proposal> proposals) const = 0;
  // Mean cross-entropy of every proposal row against `target_label` and its
  // exact gradient w.r.t. the pixels, with proposals held fixed.
  virtual LossGradient loss_and_gradient(const Image& image, std::span<const Proposal> proposals,
                                         int target_label) const = 0;

  // propose -> classify -> argmax/threshold -> NMS(0.5).
  std::vector<Detection> detect(const Image& image, double threshold) const;

  // Per-proposal best object category (background excluded, lowest index on
  // ties) with its score, before any thresholding or suppression.
  std::vector<Detection> candidates(std::span<const Proposal> proposals, const ScoreMatrix& scores) const;

  // Largest object-category score in the matrix (background excluded).
  double max_object_score(const ScoreMatrix& scores) const;

  int category_index(const std::string& name) const;  // -1 when unknown
};

inline constexpr double kDetectNmsIou = 0.5;

// Threshold candidates at `threshold` (score >= threshold survives), sort by
// descending score (stable on proposal order) and suppress at IoU 0.5.
std::vector<Detection> threshold_and_suppress(std::vector<Detection> candidates, double threshold);

}  // namespace cloak
