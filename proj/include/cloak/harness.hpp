#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cloak/dataset.hpp"
#include "cloak/detector.hpp"
#include "cloak/errors.hpp"
#include "cloak/report.hpp"

namespace cloak {

// Raised when an image cannot be read mid-batch; carries every record
// finished so far so the caller can salvage it to disk.
class BatchAborted : public LoadError {
 public:
  BatchAborted(const std::string& what, EvaluationReport partial)
      : LoadError(what), partial_(std::move(partial)) {}
  const EvaluationReport& partial() const noexcept { return partial_; }

 private:
  EvaluationReport partial_;
};

// Detects, attacks and applies every baseline to each selected image, then
// aggregates. Images run in parallel; records and aggregates are in manifest
// order and independent of the worker count.
EvaluationReport run_batch(const Detector& detector, const DatasetManifest& manifest, const RunConfig& config);

// `parameter` is "epsilon", "threshold" or a baseline method name. Epsilon
// and baseline sweeps run one batch per value; threshold sweeps attack once
// at the configured T and re-threshold the stored pre-NMS candidates.
EvaluationReport sweep_parameter(const Detector& detector, const DatasetManifest& manifest, const RunConfig& base,
                                 const std::string& parameter, const std::vector<double>& values);

// Leakage of the adversarial outputs at threshold `threshold` using the
// stored candidates, over the originals' detections at the run threshold.
CurvePoint rethreshold_point(const EvaluationReport& report, double threshold);

struct CategoryLeakage {
  int category = 0;
  std::string name;
  Rate leakage;  // degenerate when the category never appears as sensitive ground truth
};

// Sensitive-mode leakage restricted to each category in turn.
std::vector<CategoryLeakage> per_category_leakage(const EvaluationReport& report, const std::vector<int>& categories);

}  // namespace cloak
