#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cloak/attack.hpp"
#include "cloak/baselines.hpp"
#include "cloak/geometry.hpp"
#include "cloak/image.hpp"
#include "cloak/kernels.hpp"
#include "cloak/metrics.hpp"

namespace cloak {

inline constexpr int kReportFormatVersion = 1;
inline constexpr const char* kAdversarialMethod = "adversarial";

// How the sensitive categories of each image are chosen in sensitive mode.
enum class SensitivePolicy { kFixed, kPerImage, kAllPreDetected };

std::string to_string(SensitivePolicy policy);
SensitivePolicy sensitive_policy_from_string(const std::string& name);

struct RunConfig {
  AttackConfig attack;
  bool run_attack = true;
  std::vector<BaselineSpec> baselines;
  SensitivePolicy sensitive_policy = SensitivePolicy::kFixed;
  std::set<int> sensitive_categories;                           // kFixed
  std::map<std::string, std::set<int>> per_image_sensitive;     // kPerImage, keyed by image id
  int target_category = -1;                                     // y_non, sensitive mode only
  MatchCriterion criterion;
  kernels::SsimParams ssim;
  std::uint64_t seed = 0;
  std::optional<std::size_t> sample_size;  // seeded random subset of the manifest
  int workers = 0;                         // 0 = OpenMP default

  // Throws InvalidInput naming the offending field.
  void validate(int category_count, int background_index) const;
  bool operator==(const RunConfig&) const = default;
};

struct MethodRecord {
  std::string method;  // kAdversarialMethod or a baseline name
  std::vector<Detection> detections;
  double psnr = 0.0;  // +infinity when the output equals the original
  double ssim = 0.0;
  // Adversarial method only.
  std::vector<Detection> candidates;  // per-proposal argmax before thresholding
  bool attack_succeeded = false;
  int iterations = 0;
  std::string image_file;  // relative to the report directory
  Image image;             // the output itself; persisted for the adversarial method

  bool operator==(const MethodRecord&) const = default;
};

struct ImageRecord {
  std::string id;
  std::optional<double> sweep_value;
  bool skipped = false;
  std::string skip_reason;
  std::vector<Detection> original_detections;
  std::vector<Detection> original_candidates;
  std::set<int> sensitive_categories;
  std::optional<std::vector<Annotation>> ground_truth;
  std::vector<MethodRecord> methods;

  const MethodRecord* method(const std::string& name) const;
  bool operator==(const ImageRecord&) const = default;
};

struct AggregateRow {
  std::string method;
  std::optional<double> sweep_value;
  std::size_t images = 0;
  double success_rate = 0.0;
  std::optional<double> leakage_rate;  // absent when ground truth is missing (sensitive mode)
  bool leakage_degenerate = false;     // zero denominator
  bool success_presence_fallback = false;
  double mean_psnr = 0.0;              // over outputs that differ from the original
  double mean_ssim = 0.0;
  std::size_t identical_outputs = 0;

  bool operator==(const AggregateRow&) const = default;
};

struct CurvePoint {
  double value = 0.0;
  double success_rate = 0.0;
  std::optional<double> leakage_rate;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  bool operator==(const CurvePoint&) const = default;
};

struct SweepCurve {
  std::string parameter;
  std::string method;
  std::vector<CurvePoint> points;
  bool operator==(const SweepCurve&) const = default;
};

struct EvaluationReport {
  int format_version = kReportFormatVersion;
  RunConfig config;
  std::vector<std::string> category_names;
  std::vector<ImageRecord> records;
  std::vector<AggregateRow> aggregates;
  std::vector<SweepCurve> curves;
  std::size_t skipped = 0;
  bool ground_truth_missing = false;

  bool operator==(const EvaluationReport&) const = default;
};

// Per-image outcomes of one method (skipped records excluded), in record order.
std::vector<ImageOutcome> outcomes_for(const EvaluationReport& report, const std::string& method,
                                       std::optional<double> sweep_value = std::nullopt);

// Recomputes every aggregate row from the per-image records.
std::vector<AggregateRow> compute_aggregates(const EvaluationReport& report);

// Writes report.json, tables.csv, curves.csv (when curves exist) and the
// adversarial images as 16-bit PNG under images/.
void write_report(const EvaluationReport& report, const std::filesystem::path& directory);

// Reads a report back, reloads its images and re-verifies every aggregate
// row. Throws VersionError on a format mismatch and LoadError naming the row
// whose stored values disagree with the records.
EvaluationReport read_report(const std::filesystem::path& directory);

// The serialized aggregate rows exactly as they appear in report.json.
std::string aggregates_json(const EvaluationReport& report);

}  // namespace cloak
