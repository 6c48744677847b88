#include "cloak/records.hpp"

namespace cloak {

using nlohmann::json;

json box_to_json(const Box& box) {
  return {{"x_min", box.x_min}, {"y_min", box.y_min}, {"x_max", box.x_max}, {"y_max", box.y_max}};
}

json detections_to_json(std::span<const Detection> detections, const std::vector<std::string>& names) {
  json out = json::array();
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& d = detections[i];
    const bool known = d.category >= 0 && d.category < static_cast<int>(names.size());
    out.push_back({{"index", i},
                   {"box", box_to_json(d.box)},
                   {"category", d.category},
                   {"category_name", known ? names[d.category] : std::string()},
                   {"score", d.score}});
  }
  return out;
}

json trace_to_json(std::span<const TraceRecord> trace) {
  json out = json::array();
  for (const auto& t : trace) {
    out.push_back({{"i", t.iteration},
                   {"target_label", t.target_label},
                   {"loss", t.loss},
                   {"s_max", t.s_max},
                   {"step_linf", t.step_linf},
                   {"certified", t.certified}});
  }
  return out;
}

json attack_record_json(const AttackConfig& config, const AttackResult& result, const std::vector<std::string>& names) {
  return {{"mode", to_string(config.mode)},
          {"epsilon", config.epsilon},
          {"threshold", config.threshold},
          {"max_iterations", config.max_iterations},
          {"iterations_used", result.iterations_used},
          {"succeeded", result.succeeded},
          {"trace", trace_to_json(result.trace)},
          {"final_detections", detections_to_json(result.final_detections, names)}};
}

}  // namespace cloak
