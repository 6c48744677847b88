#include "cloak/detector.hpp"

#include <algorithm>

#include "cloak/errors.hpp"

namespace cloak {

ScoreMatrix::ScoreMatrix(int rows, std::vector<std::string> category_names)
    : rows_(rows), names_(std::move(category_names)) {
  if (rows < 0) throw InvalidInput("score matrix rows must be non-negative");
  if (names_.size() < 2) throw InvalidInput("score matrix needs at least two categories");
  values_.assign(static_cast<std::size_t>(rows_) * names_.size(), 0.0);
}

std::vector<Detection> Detector::candidates(std::span<const Proposal> proposals, const ScoreMatrix& scores) const {
  if (static_cast<int>(proposals.size()) != scores.rows()) {
    throw InvalidInput("proposal count does not match score matrix rows");
  }
  const int bg = background_index();
  std::vector<Detection> out;
  out.reserve(proposals.size());
  for (int j = 0; j < scores.rows(); ++j) {
    int best = -1;
    double best_score = -1.0;
    for (int k = 0; k < scores.cols(); ++k) {
      if (k == bg) continue;
      if (scores.at(j, k) > best_score) {
        best_score = scores.at(j, k);
        best = k;
      }
    }
    out.push_back(Detection{proposals[j].box, best, best_score});
  }
  return out;
}

double Detector::max_object_score(const ScoreMatrix& scores) const {
  const int bg = background_index();
  double best = 0.0;
  for (int j = 0; j < scores.rows(); ++j) {
    for (int k = 0; k < scores.cols(); ++k) {
      if (k != bg) best = std::max(best, scores.at(j, k));
    }
  }
  return best;
}

std::vector<Detection> threshold_and_suppress(std::vector<Detection> candidates, double threshold) {
  std::erase_if(candidates, [threshold](const Detection& d) { return d.score < threshold; });
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return non_max_suppression(candidates, kDetectNmsIou);
}

std::vector<Detection> Detector::detect(const Image& image, double threshold) const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidInput("detection threshold must lie in (0,1)");
  const auto proposals = propose(image);
  if (proposals.empty()) return {};
  const auto scores = classify(image, proposals);
  return threshold_and_suppress(candidates(proposals, scores), threshold);
}

int Detector::category_index(const std::string& name) const {
  const auto& names = category_names();
  const auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

}  // namespace cloak
