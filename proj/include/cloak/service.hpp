#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cloak/attack.hpp"
#include "cloak/detector.hpp"
#include "cloak/errors.hpp"

namespace httplib {
class Server;
}

namespace cloak {

// What a caller asks for, before names and indices are resolved.
struct AttackRequest {
  AttackMode mode = AttackMode::kAll;
  std::vector<std::string> sensitive_names;
  std::vector<int> sensitive_boxes;  // indices into the pre-detections
  std::string target_name;           // y_non, sensitive mode only
  AttackConfig config;
};

struct FieldError {
  std::string field;
  std::string message;
};

// Validation failure carrying one message per offending field.
class RequestError : public InvalidInput {
 public:
  explicit RequestError(std::vector<FieldError> errors);
  const std::vector<FieldError>& errors() const noexcept { return errors_; }

 private:
  std::vector<FieldError> errors_;
};

struct ResolvedAttack {
  AttackConfig config;
  std::set<int> sensitive;
  int target = -1;
};

// Maps names and box indices onto category indices and validates every
// field, collecting all problems into one RequestError.
ResolvedAttack resolve_request(const Detector& detector, const std::vector<Detection>& pre_detections,
                               const AttackRequest& request);

// The single code path behind both the CLI and the service.
AttackResult execute_attack(const Detector& detector, const Image& image, const ResolvedAttack& attack,
                            const TraceObserver& on_trace = {});

struct ServiceOptions {
  std::string host = "127.0.0.1";  // loopback only unless explicitly changed
  int port = 8080;
  int workers = 2;                 // attack jobs running at once (across sessions)
  bool queueing = true;            // false: a second job for a busy session gets 409
  double detection_threshold = 0.3;
};

// Local HTTP service under /v1: sessions hold an uploaded image and its
// pre-detections; attack jobs run on a worker pool, one at a time per
// session in FIFO order.
class Service {
 public:
  Service(std::shared_ptr<const Detector> detector, ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void register_routes(httplib::Server& server);

  // Binds and serves until stop(); returns false when binding fails.
  bool listen();
  // Binds an ephemeral loopback port and serves on a background thread.
  int start_background();
  void stop();

 private:
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace cloak
