#pragma once

#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cloak/detector.hpp"
#include "cloak/image.hpp"

namespace cloak {

enum class AttackMode { kAll, kSensitive };

std::string to_string(AttackMode mode);
AttackMode attack_mode_from_string(const std::string& name);

struct AttackConfig {
  double epsilon = 3.0 / 255.0;       // per-step L-inf bound
  double threshold = 0.3;             // detection threshold T
  int max_iterations = 150;           // I
  std::optional<double> step_size;    // alpha; defaults to epsilon
  AttackMode mode = AttackMode::kAll;
  // Optional cumulative bound against the original image; off by default.
  std::optional<double> total_budget;

  double alpha() const noexcept { return step_size.value_or(epsilon); }
  // Throws InvalidInput naming the offending field.
  void validate() const;
  bool operator==(const AttackConfig&) const = default;
};

struct NonSensitiveSet {
  std::vector<int> labels;  // ascending category indices
  int detected_count = 0;   // d: distinct categories in the pre-detection

  // Round-robin target for 1-based iteration i.
  int target_for(int iteration) const {
    return labels[static_cast<std::size_t>(iteration - 1) % labels.size()];
  }
};

struct TraceRecord {
  int iteration = 0;
  int target_label = 0;
  double loss = 0.0;       // objective at the previous iterate for this target
  double s_max = 0.0;      // stop score after the step
  double step_linf = 0.0;  // ||x'_i - x'_{i-1}||_inf
  bool certified = false;  // stop rule met and confirmed by a fresh detection pass
};

struct AttackResult {
  Image adversarial_image;
  bool succeeded = false;
  int iterations_used = 0;
  std::vector<TraceRecord> trace;
  std::vector<Detection> final_detections;
  std::vector<Proposal> proposals;  // frozen proposals used for every iteration
};

// Receives every iterate x'_i (i >= 1) as soon as it is produced.
using IterateObserver = std::function<void(int iteration, const Image& iterate)>;
// Receives every trace record as soon as its iteration completes.
using TraceObserver = std::function<void(const TraceRecord& record)>;

// Every category index in [0, K) that does not appear in `pre_detections`,
// ascending. Throws AttackError when no category is left.
NonSensitiveSet select_nonsensitive_set(std::span<const Detection> pre_detections, int category_count);

// Clamp(candidate, previous - eps, previous + eps) intersected with [0,1].
// The bound holds exactly when re-measured as |out - previous| in doubles.
Image clamp_step(const Image& candidate, const Image& previous, double epsilon);

// Storage grid for attack outputs (16-bit PNG levels).
inline constexpr int kOutputLevels = 65535;

// Moves each changed pixel of `candidate` onto the k / 65535 grid without
// leaving the epsilon-ball around `previous`. Unchanged pixels keep their value.
Image snap_to_output_grid(const Image& candidate, const Image& previous, double epsilon);

// Hide every object: pre-detect, target the non-detected categories in turn,
// stop once no object score on the frozen proposals reaches T.
AttackResult hide_all(const Detector& detector, const Image& image, const AttackConfig& config,
                      const IterateObserver& observer = {}, const TraceObserver& on_trace = {});

// Misclassify the sensitive categories as `target_category`; stop once no
// sensitive score on the frozen proposals reaches T.
AttackResult hide_sensitive(const Detector& detector, const Image& image, const std::set<int>& sensitive_categories,
                            int target_category, const AttackConfig& config, const IterateObserver& observer = {},
                            const TraceObserver& on_trace = {});

}  // namespace cloak
