#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cloak/attack.hpp"
#include "cloak/geometry.hpp"

namespace cloak {

// JSON shapes shared by the CLI summaries and the HTTP service.
nlohmann::json box_to_json(const Box& box);
nlohmann::json detections_to_json(std::span<const Detection> detections, const std::vector<std::string>& names);
nlohmann::json trace_to_json(std::span<const TraceRecord> trace);

// {mode, epsilon, threshold, max_iterations, iterations_used, succeeded, trace, detections}
nlohmann::json attack_record_json(const AttackConfig& config, const AttackResult& result,
                                  const std::vector<std::string>& names);

}  // namespace cloak
