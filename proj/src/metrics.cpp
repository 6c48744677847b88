#include "cloak/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cloak/errors.hpp"

namespace cloak {

double psnr(const Image& a, const Image& b, double peak) {
  if (!a.same_shape(b)) throw InvalidInput("psnr: image shapes differ");
  if (a.empty()) throw InvalidInput("psnr: empty images");
  if (!(peak > 0.0)) throw InvalidInput("psnr: peak must be positive");
  const auto pa = a.data(), pb = b.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = pa[i] - pb[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(pa.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Image& a, const Image& b, const kernels::SsimParams& params, kernels::Backend backend) {
  if (!a.same_shape(b)) throw InvalidInput("ssim: image shapes differ");
  if (params.window < 1) throw InvalidInput("ssim: window must be positive");
  if (a.height() < params.window || a.width() < params.window) {
    throw InvalidInput("ssim: image smaller than the " + std::to_string(params.window) + "x" +
                       std::to_string(params.window) + " window");
  }
  return kernels::ssim_mean(backend, a, b, params);
}

void MatchCriterion::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw InvalidInput("iou_threshold must lie in (0,1)");
}

std::vector<MatchedPair> match_boxes(std::span<const Detection> detections, std::span<const Annotation> ground_truth,
                                     const MatchCriterion& criterion) {
  criterion.validate();
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return detections[l].score > detections[r].score; });
  std::vector<bool> taken(ground_truth.size(), false);
  std::vector<MatchedPair> pairs;
  for (std::size_t d : order) {
    std::size_t best = ground_truth.size();
    double best_iou = -1.0;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (taken[g]) continue;
      if (criterion.require_category_match && ground_truth[g].category != detections[d].category) continue;
      const double overlap = iou(detections[d].box, ground_truth[g].box);
      if (overlap >= criterion.iou_threshold && overlap > best_iou) {
        best = g;
        best_iou = overlap;
      }
    }
    if (best < ground_truth.size()) {
      taken[best] = true;
      pairs.push_back({d, best, best_iou});
    }
  }
  return pairs;
}

void ImageOutcome::validate() const {
  if (mode == AttackMode::kAll && !sensitive_categories.empty()) {
    throw InvalidInput("outcome '" + image_id + "': sensitive categories given for mode all");
  }
  if (mode == AttackMode::kSensitive && sensitive_categories.empty()) {
    throw InvalidInput("outcome '" + image_id + "': sensitive mode without sensitive categories");
  }
}

namespace {

Rate ratio(std::size_t numerator, std::size_t denominator) {
  Rate r;
  r.numerator = numerator;
  r.denominator = denominator;
  if (denominator == 0) {
    r.degenerate = true;
  } else {
    r.value = static_cast<double>(numerator) / static_cast<double>(denominator);
  }
  return r;
}

void require_mode(std::span<const ImageOutcome> outcomes, AttackMode mode, const char* metric) {
  for (const auto& o : outcomes) {
    o.validate();
    if (o.mode != mode) {
      throw MetricError(std::string(metric) + ": outcome '" + o.image_id + "' has mode " + to_string(o.mode));
    }
  }
}

std::vector<Annotation> sensitive_truth(std::span<const Annotation> ground_truth, const std::set<int>& sensitive,
                                        std::optional<int> category) {
  std::vector<Annotation> out;
  for (const auto& a : ground_truth) {
    if (!sensitive.contains(a.category)) continue;
    if (category && a.category != *category) continue;
    out.push_back(a);
  }
  return out;
}

}  // namespace

std::size_t count_sensitive_matches(std::span<const Detection> detections, std::span<const Annotation> ground_truth,
                                    const std::set<int>& sensitive, const MatchCriterion& criterion,
                                    std::optional<int> category) {
  const auto truth = sensitive_truth(ground_truth, sensitive, category);
  std::vector<Detection> dets;
  for (const auto& d : detections) {
    if (!sensitive.contains(d.category)) continue;
    if (category && d.category != *category) continue;
    dets.push_back(d);
  }
  return match_boxes(dets, truth, criterion).size();
}

Rate success_rate_all(std::span<const ImageOutcome> outcomes) {
  if (outcomes.empty()) throw MetricError("success rate is undefined for an empty outcome set");
  require_mode(outcomes, AttackMode::kAll, "success_rate_all");
  const auto hits = std::count_if(outcomes.begin(), outcomes.end(),
                                  [](const ImageOutcome& o) { return o.adversarial_detections.empty(); });
  return ratio(static_cast<std::size_t>(hits), outcomes.size());
}

Rate success_rate_sensitive(std::span<const ImageOutcome> outcomes, const MatchCriterion& criterion) {
  if (outcomes.empty()) throw MetricError("success rate is undefined for an empty outcome set");
  require_mode(outcomes, AttackMode::kSensitive, "success_rate_sensitive");
  criterion.validate();
  std::size_t hits = 0;
  bool fallback = false;
  for (const auto& o : outcomes) {
    bool hidden;
    if (o.ground_truth) {
      hidden = count_sensitive_matches(o.adversarial_detections, *o.ground_truth, o.sensitive_categories,
                                       criterion) == 0;
    } else {
      fallback = true;
      hidden = std::none_of(o.adversarial_detections.begin(), o.adversarial_detections.end(),
                            [&](const Detection& d) { return o.sensitive_categories.contains(d.category); });
    }
    if (hidden) ++hits;
  }
  Rate r = ratio(hits, outcomes.size());
  r.presence_fallback = fallback;
  return r;
}

Rate leakage_all(std::span<const ImageOutcome> outcomes) {
  require_mode(outcomes, AttackMode::kAll, "leakage_all");
  std::size_t adversarial = 0, original = 0;
  for (const auto& o : outcomes) {
    adversarial += o.adversarial_detections.size();
    original += o.original_detections.size();
  }
  return ratio(adversarial, original);
}

Rate leakage_sensitive(std::span<const ImageOutcome> outcomes, const MatchCriterion& criterion,
                       std::optional<int> only_category) {
  require_mode(outcomes, AttackMode::kSensitive, "leakage_sensitive");
  criterion.validate();
  std::size_t adversarial = 0, original = 0;
  for (const auto& o : outcomes) {
    if (!o.ground_truth) {
      throw MetricError("leakage_sensitive: outcome '" + o.image_id + "' has no ground truth");
    }
    adversarial += count_sensitive_matches(o.adversarial_detections, *o.ground_truth, o.sensitive_categories,
                                           criterion, only_category);
    original += count_sensitive_matches(o.original_detections, *o.ground_truth, o.sensitive_categories, criterion,
                                        only_category);
  }
  return ratio(adversarial, original);
}

Rate disguise_rate(std::span<const ImageOutcome> outcomes, int target_category, double iou_threshold) {
  require_mode(outcomes, AttackMode::kSensitive, "disguise_rate");
  const MatchCriterion criterion{iou_threshold, false};
  criterion.validate();
  std::size_t disguised = 0, total = 0;
  for (const auto& o : outcomes) {
    if (!o.ground_truth) {
      throw MetricError("disguise_rate: outcome '" + o.image_id + "' has no ground truth");
    }
    const auto truth = sensitive_truth(*o.ground_truth, o.sensitive_categories, std::nullopt);
    std::vector<Detection> as_target;
    for (const auto& d : o.adversarial_detections) {
      if (d.category == target_category) as_target.push_back(d);
    }
    total += truth.size();
    disguised += match_boxes(as_target, truth, criterion).size();
  }
  return ratio(disguised, total);
}

}  // namespace cloak
