#include "cloak/attack.hpp"

#include <algorithm>
#include <cmath>

#include "cloak/errors.hpp"

namespace cloak {

std::string to_string(AttackMode mode) { return mode == AttackMode::kAll ? "all" : "sensitive"; }

AttackMode attack_mode_from_string(const std::string& name) {
  if (name == "all") return AttackMode::kAll;
  if (name == "sensitive") return AttackMode::kSensitive;
  throw InvalidInput("mode must be 'all' or 'sensitive', got '" + name + "'");
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon <= 16.0 / 255.0 + 1e-12)) throw InvalidInput("epsilon must lie in (0, 16/255]");
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidInput("threshold must lie in (0, 1)");
  if (max_iterations < 1) throw InvalidInput("max_iterations must be at least 1");
  if (step_size && !(*step_size > 0.0 && *step_size <= epsilon)) {
    throw InvalidInput("step_size must lie in (0, epsilon]");
  }
  if (total_budget && !(*total_budget > 0.0)) throw InvalidInput("total_budget must be positive");
}

NonSensitiveSet select_nonsensitive_set(std::span<const Detection> pre_detections, int category_count) {
  if (category_count < 2) throw InvalidInput("category count must be at least 2");
  std::vector<bool> detected(static_cast<std::size_t>(category_count), false);
  for (const auto& d : pre_detections) {
    if (d.category < 0 || d.category >= category_count) throw InvalidInput("detection category out of range");
    detected[d.category] = true;
  }
  NonSensitiveSet out;
  for (int k = 0; k < category_count; ++k) {
    if (detected[k]) {
      ++out.detected_count;
    } else {
      out.labels.push_back(k);
    }
  }
  if (out.labels.empty()) throw AttackError("every category was pre-detected; no non-sensitive target remains");
  return out;
}

namespace {

// [previous - eps, previous + eps] with endpoints pulled in by one ulp when
// rounding would put them further than eps from previous.
std::pair<double, double> ball(double previous, double epsilon) {
  double lo = previous - epsilon;
  double hi = previous + epsilon;
  if (previous - lo > epsilon) lo = std::nextafter(lo, previous);
  if (hi - previous > epsilon) hi = std::nextafter(hi, previous);
  return {lo, hi};
}

}  // namespace

Image clamp_step(const Image& candidate, const Image& previous, double epsilon) {
  if (!candidate.same_shape(previous)) throw InvalidInput("clamp_step: shape mismatch");
  if (!(epsilon >= 0.0)) throw InvalidInput("clamp_step: epsilon must be non-negative");
  Image out = candidate;
  auto o = out.data();
  const auto p = previous.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const auto [lo, hi] = ball(p[i], epsilon);
    o[i] = std::clamp(o[i], std::max(lo, 0.0), std::min(hi, 1.0));
  }
  return out;
}

Image snap_to_output_grid(const Image& candidate, const Image& previous, double epsilon) {
  if (!candidate.same_shape(previous)) throw InvalidInput("snap_to_output_grid: shape mismatch");
  Image out = candidate;
  auto o = out.data();
  const auto p = previous.data();
  const double scale = kOutputLevels;
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (o[i] == p[i]) continue;
    const double toward = o[i] > p[i] ? -1.0 : 1.0;
    double level = std::round(std::clamp(o[i], 0.0, 1.0) * scale);
    double value = level / scale;
    for (int guard = 0; guard < 4 && std::abs(value - p[i]) > epsilon; ++guard) {
      level += toward;
      value = level / scale;
    }
    o[i] = std::abs(value - p[i]) <= epsilon && value >= 0.0 && value <= 1.0 ? value : p[i];
  }
  return out;
}

namespace {

Image signed_step(const Image& current, const Image& gradient, double alpha) {
  Image out = current;
  auto o = out.data();
  const auto g = gradient.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (g[i] > 0.0) {
      o[i] -= alpha;
    } else if (g[i] < 0.0) {
      o[i] += alpha;
    }
  }
  return out;
}

double sensitive_max(const ScoreMatrix& scores, const std::set<int>& sensitive) {
  double best = 0.0;
  for (int j = 0; j < scores.rows(); ++j) {
    for (int k : sensitive) best = std::max(best, scores.at(j, k));
  }
  return best;
}

// Shared iteration loop. `target_for(i)` names the label for iteration i,
// `stop_score` reduces a score matrix to the quantity compared with T, and
// `certify` re-checks success on a fresh detection pass.
template <typename TargetFn, typename StopFn, typename CertifyFn>
AttackResult run_loop(const Detector& detector, const Image& image, std::vector<Proposal> proposals,
                      const AttackConfig& config, const IterateObserver& observer, const TraceObserver& on_trace,
                      TargetFn target_for,
                      StopFn stop_score, CertifyFn certify) {
  AttackResult result;
  result.proposals = std::move(proposals);
  Image current = image;
  LossGradient state = detector.loss_and_gradient(current, result.proposals, target_for(1));
  bool done = false;
  int i = 1;
  for (; i <= config.max_iterations; ++i) {
    Image next = clamp_step(signed_step(current, state.gradient, config.alpha()), current, config.epsilon);
    if (config.total_budget) next = clamp_step(next, image, *config.total_budget);
    next = snap_to_output_grid(next, current, config.epsilon);

    TraceRecord record;
    record.iteration = i;
    record.target_label = target_for(i);
    record.loss = state.loss;
    record.step_linf = linf_distance(next, current);
    current = std::move(next);
    if (observer) observer(i, current);

    state = detector.loss_and_gradient(current, result.proposals, target_for(i + 1));
    record.s_max = stop_score(state.scores);
    if (record.s_max < config.threshold) {
      result.final_detections = detector.detect(current, config.threshold);
      record.certified = certify(result.final_detections);
      done = record.certified;
    }
    result.trace.push_back(record);
    if (on_trace) on_trace(record);
    if (done) break;
  }
  result.iterations_used = std::min(i, config.max_iterations);
  result.succeeded = done;
  result.adversarial_image = std::move(current);
  if (!done) result.final_detections = detector.detect(result.adversarial_image, config.threshold);
  return result;
}

}  // namespace

AttackResult hide_all(const Detector& detector, const Image& image, const AttackConfig& config,
                      const IterateObserver& observer, const TraceObserver& on_trace) {
  config.validate();
  if (config.mode != AttackMode::kAll) throw InvalidInput("hide_all requires mode 'all'");
  validate_image(image, detector.min_image_side());

  auto proposals = detector.propose(image);
  std::vector<Detection> pre;
  if (!proposals.empty()) {
    pre = threshold_and_suppress(detector.candidates(proposals, detector.classify(image, proposals)), config.threshold);
  }
  if (pre.empty()) {
    AttackResult unchanged;
    unchanged.adversarial_image = image;
    unchanged.succeeded = true;
    unchanged.proposals = std::move(proposals);
    return unchanged;
  }
  const NonSensitiveSet targets = select_nonsensitive_set(pre, detector.category_count());

  return run_loop(
      detector, image, std::move(proposals), config, observer, on_trace,
      [&](int i) { return targets.target_for(i); },
      [&](const ScoreMatrix& s) { return detector.max_object_score(s); },
      [](const std::vector<Detection>& dets) { return dets.empty(); });
}

AttackResult hide_sensitive(const Detector& detector, const Image& image, const std::set<int>& sensitive_categories,
                            int target_category, const AttackConfig& config, const IterateObserver& observer,
                            const TraceObserver& on_trace) {
  config.validate();
  if (config.mode != AttackMode::kSensitive) throw InvalidInput("hide_sensitive requires mode 'sensitive'");
  const int K = detector.category_count();
  if (target_category < 0 || target_category >= K) throw InvalidInput("target category out of range");
  if (sensitive_categories.contains(target_category)) {
    throw InvalidInput("target category must not be one of the sensitive categories");
  }
  for (int k : sensitive_categories) {
    if (k < 0 || k >= K) throw InvalidInput("sensitive category out of range");
    if (k == detector.background_index()) throw InvalidInput("background cannot be a sensitive category");
  }
  validate_image(image, detector.min_image_side());

  auto unchanged = [&](std::vector<Proposal> proposals) {
    AttackResult r;
    r.adversarial_image = image;
    r.succeeded = true;
    r.proposals = std::move(proposals);
    r.final_detections = detector.detect(image, config.threshold);
    return r;
  };
  if (sensitive_categories.empty()) return unchanged({});

  auto proposals = detector.propose(image);
  if (proposals.empty()) return unchanged(std::move(proposals));
  // The stop rule is evaluated on the untouched image first: nothing to do
  // when no sensitive score reaches T on the frozen proposals.
  if (sensitive_max(detector.classify(image, proposals), sensitive_categories) < config.threshold) {
    return unchanged(std::move(proposals));
  }

  auto no_sensitive = [&](const std::vector<Detection>& dets) {
    return std::none_of(dets.begin(), dets.end(),
                        [&](const Detection& d) { return sensitive_categories.contains(d.category); });
  };
  return run_loop(
      detector, image, std::move(proposals), config, observer, on_trace, [&](int) { return target_category; },
      [&](const ScoreMatrix& s) { return sensitive_max(s, sensitive_categories); }, no_sensitive);
}

}  // namespace cloak
