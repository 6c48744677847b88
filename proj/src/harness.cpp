#include "cloak/harness.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>

#include <omp.h>

#include "cloak/errors.hpp"

namespace cloak {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a simple combination.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::size_t> select_images(const DatasetManifest& manifest, const RunConfig& config) {
  std::vector<std::size_t> order(manifest.images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!config.sample_size || *config.sample_size >= order.size()) return order;
  std::mt19937_64 rng(config.seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(*config.sample_size);
  std::sort(order.begin(), order.end());
  return order;
}

std::set<int> sensitive_for(const RunConfig& config, const ImageEntry& entry,
                            const std::vector<Detection>& original) {
  switch (config.sensitive_policy) {
    case SensitivePolicy::kFixed: return config.sensitive_categories;
    case SensitivePolicy::kPerImage: {
      const auto it = config.per_image_sensitive.find(entry.id);
      return it == config.per_image_sensitive.end() ? std::set<int>{} : it->second;
    }
    case SensitivePolicy::kAllPreDetected: {
      std::set<int> s;
      for (const auto& d : original) s.insert(d.category);
      return s;
    }
  }
  return {};
}

std::vector<Detection> detections_with_candidates(const Detector& detector, const Image& image, double threshold,
                                                  std::vector<Detection>* candidates) {
  const auto proposals = detector.propose(image);
  std::vector<Detection> cands;
  if (!proposals.empty()) cands = detector.candidates(proposals, detector.classify(image, proposals));
  auto dets = threshold_and_suppress(cands, threshold);
  if (candidates) *candidates = std::move(cands);
  return dets;
}

ImageRecord process_image(const Detector& detector, const DatasetManifest& manifest, std::size_t index,
                          const RunConfig& config) {
  const ImageEntry& entry = manifest.images[index];
  ImageRecord rec;
  rec.id = entry.id;
  rec.ground_truth = entry.ground_truth;
  const Image original = manifest.load_image(index);
  const double T = config.attack.threshold;
  try {
    validate_image(original, detector.min_image_side());
  } catch (const InvalidInput& ex) {
    rec.skipped = true;
    rec.skip_reason = ex.what();
    return rec;
  }
  rec.original_detections = detections_with_candidates(detector, original, T, &rec.original_candidates);

  if (config.attack.mode == AttackMode::kSensitive) {
    rec.sensitive_categories = sensitive_for(config, entry, rec.original_detections);
    if (rec.sensitive_categories.empty()) {
      rec.skipped = true;
      rec.skip_reason = "no sensitive categories for this image";
      return rec;
    }
    if (rec.sensitive_categories.contains(config.target_category)) {
      rec.skipped = true;
      rec.skip_reason = "target category is among the sensitive categories";
      return rec;
    }
  }

  auto quality = [&](MethodRecord& m, const Image& out) {
    m.psnr = psnr(original, out);
    m.ssim = ssim(original, out, config.ssim, kernels::Backend::kSerial);
  };

  if (config.run_attack) {
    AttackResult result;
    try {
      result = config.attack.mode == AttackMode::kAll
                   ? hide_all(detector, original, config.attack)
                   : hide_sensitive(detector, original, rec.sensitive_categories, config.target_category,
                                    config.attack);
    } catch (const AttackError& ex) {
      rec.skipped = true;
      rec.skip_reason = ex.what();
      return rec;
    }
    MethodRecord m;
    m.method = kAdversarialMethod;
    m.attack_succeeded = result.succeeded;
    m.iterations = result.iterations_used;
    m.detections = detections_with_candidates(detector, result.adversarial_image, T, &m.candidates);
    quality(m, result.adversarial_image);
    m.image_file = "images/" + rec.id + ".png";
    m.image = std::move(result.adversarial_image);
    rec.methods.push_back(std::move(m));
  }

  for (std::size_t b = 0; b < config.baselines.size(); ++b) {
    BaselineSpec spec = config.baselines[b];
    if (spec.method == BaselineMethod::kAdditiveNoise) spec.seed = mix_seed(config.seed, index, b);
    const Image processed = apply_baseline(original, spec);
    MethodRecord m;
    m.method = to_string(spec.method);
    m.detections = detector.detect(processed, T);
    quality(m, processed);
    rec.methods.push_back(std::move(m));
  }
  return rec;
}

void finish(EvaluationReport& report) {
  report.skipped = static_cast<std::size_t>(
      std::count_if(report.records.begin(), report.records.end(), [](const ImageRecord& r) { return r.skipped; }));
  report.ground_truth_missing = std::any_of(report.records.begin(), report.records.end(),
                                            [](const ImageRecord& r) { return !r.skipped && !r.ground_truth; });
  report.aggregates = compute_aggregates(report);
}

std::vector<ImageRecord> run_records(const Detector& detector, const DatasetManifest& manifest,
                                     const RunConfig& config, const std::vector<std::size_t>& selected,
                                     std::string* error) {
  const auto n = static_cast<std::ptrdiff_t>(selected.size());
  std::vector<ImageRecord> records(selected.size());
  std::vector<char> done(selected.size(), 0);
  std::exception_ptr failure;
  const int threads = config.workers > 0 ? config.workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      records[i] = process_image(detector, manifest, selected[i], config);
      done[i] = 1;
    } catch (...) {
#pragma omp critical(cloak_batch_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) {
    try {
      std::rethrow_exception(failure);
    } catch (const std::exception& ex) {
      *error = ex.what();
    }
    std::vector<ImageRecord> finished;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (done[i]) finished.push_back(std::move(records[i]));
    }
    return finished;
  }
  return records;
}

}  // namespace

EvaluationReport run_batch(const Detector& detector, const DatasetManifest& manifest, const RunConfig& config) {
  config.validate(detector.category_count(), detector.background_index());
  if (manifest.category_names != detector.category_names()) {
    throw InvalidInput("dataset categories were mapped onto a different category table than the detector's");
  }
  EvaluationReport report;
  report.config = config;
  report.category_names = detector.category_names();
  std::string error;
  report.records = run_records(detector, manifest, config, select_images(manifest, config), &error);
  finish(report);
  if (!error.empty()) throw BatchAborted(error, std::move(report));
  return report;
}

namespace {

double mean_finite(const std::vector<double>& values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : values) {
    if (std::isfinite(v)) {
      sum += v;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::infinity() : sum / static_cast<double>(n);
}

}  // namespace

CurvePoint rethreshold_point(const EvaluationReport& report, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidInput("threshold must lie in (0,1)");
  const auto& cfg = report.config;
  std::vector<ImageOutcome> outcomes;
  std::vector<double> psnrs, ssims;
  for (const auto& r : report.records) {
    if (r.skipped) continue;
    const MethodRecord* m = r.method(kAdversarialMethod);
    if (!m) throw InvalidInput("re-thresholding needs adversarial records");
    ImageOutcome o;
    o.image_id = r.id;
    o.mode = cfg.attack.mode;
    o.original_detections = r.original_detections;
    o.adversarial_detections = threshold_and_suppress(m->candidates, threshold);
    if (o.mode == AttackMode::kSensitive) o.sensitive_categories = r.sensitive_categories;
    o.ground_truth = r.ground_truth;
    outcomes.push_back(std::move(o));
    psnrs.push_back(m->psnr);
    ssims.push_back(m->ssim);
  }
  if (outcomes.empty()) throw MetricError("no completed images to re-threshold");
  CurvePoint p;
  p.value = threshold;
  if (cfg.attack.mode == AttackMode::kAll) {
    p.success_rate = success_rate_all(outcomes).value;
    p.leakage_rate = leakage_all(outcomes).value;
  } else {
    p.success_rate = success_rate_sensitive(outcomes, cfg.criterion).value;
    if (!report.ground_truth_missing) p.leakage_rate = leakage_sensitive(outcomes, cfg.criterion).value;
  }
  p.mean_psnr = mean_finite(psnrs);
  p.mean_ssim = std::accumulate(ssims.begin(), ssims.end(), 0.0) / static_cast<double>(ssims.size());
  return p;
}

EvaluationReport sweep_parameter(const Detector& detector, const DatasetManifest& manifest, const RunConfig& base,
                                 const std::string& parameter, const std::vector<double>& values) {
  if (values.size() < 2) throw InvalidInput("a sweep needs at least two values");
  // Reject every invalid value before running anything.
  std::vector<RunConfig> configs;
  std::optional<BaselineMethod> baseline;
  if (parameter != "epsilon" && parameter != "threshold") baseline = baseline_method_from_string(parameter);
  for (double v : values) {
    RunConfig c = base;
    if (parameter == "epsilon") {
      c.attack.epsilon = v;
      if (c.attack.step_size && *c.attack.step_size > v) c.attack.step_size.reset();
    } else if (parameter == "threshold") {
      if (!(v > 0.0 && v < 1.0)) throw InvalidInput("threshold value " + std::to_string(v) + " outside (0,1)");
    } else {
      c.run_attack = false;
      BaselineSpec spec = BaselineSpec::defaults(*baseline);
      spec.parameter = v;
      spec.validate();
      c.baselines = {spec};
    }
    c.validate(detector.category_count(), detector.background_index());
    configs.push_back(std::move(c));
  }

  if (parameter == "threshold") {
    EvaluationReport report = run_batch(detector, manifest, base);
    SweepCurve curve{parameter, kAdversarialMethod, {}};
    for (double v : values) curve.points.push_back(rethreshold_point(report, v));
    report.curves.push_back(std::move(curve));
    return report;
  }

  EvaluationReport report;
  report.config = base;
  report.category_names = detector.category_names();
  const std::string method = baseline ? to_string(*baseline) : std::string(kAdversarialMethod);
  SweepCurve curve{parameter, method, {}};
  const auto selected = select_images(manifest, base);
  for (std::size_t k = 0; k < values.size(); ++k) {
    std::string error;
    auto records = run_records(detector, manifest, configs[k], selected, &error);
    for (auto& r : records) {
      r.sweep_value = values[k];
      for (auto& m : r.methods) {
        if (!m.image_file.empty()) m.image_file = "images/" + std::to_string(k) + "/" + r.id + ".png";
      }
      report.records.push_back(std::move(r));
    }
    if (!error.empty()) {
      finish(report);
      throw BatchAborted(error, std::move(report));
    }
  }
  if (baseline) {
    report.config.run_attack = false;
    report.config.baselines = {BaselineSpec::defaults(*baseline)};
  }
  finish(report);
  for (const auto& row : report.aggregates) {
    if (row.method != method || !row.sweep_value) continue;
    curve.points.push_back({*row.sweep_value, row.success_rate, row.leakage_rate, row.mean_psnr, row.mean_ssim});
  }
  report.curves.push_back(std::move(curve));
  return report;
}

std::vector<CategoryLeakage> per_category_leakage(const EvaluationReport& report,
                                                  const std::vector<int>& categories) {
  if (report.config.attack.mode != AttackMode::kSensitive) {
    throw MetricError("per-category leakage needs a sensitive-mode report");
  }
  if (report.ground_truth_missing) throw MetricError("per-category leakage needs ground truth");
  std::optional<double> first_value;
  for (const auto& r : report.records) {
    if (r.sweep_value) {
      first_value = r.sweep_value;
      break;
    }
  }
  const auto outcomes = outcomes_for(report, kAdversarialMethod, first_value);
  std::vector<CategoryLeakage> rows;
  for (int c : categories) {
    if (c < 0 || c >= static_cast<int>(report.category_names.size())) {
      throw InvalidInput("category index " + std::to_string(c) + " out of range");
    }
    rows.push_back({c, report.category_names[c], leakage_sensitive(outcomes, report.config.criterion, c)});
  }
  return rows;
}

}  // namespace cloak
