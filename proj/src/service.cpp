#include "cloak/service.hpp"

#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "cloak/image_io.hpp"
#include "cloak/metrics.hpp"
#include "cloak/params.hpp"
#include "cloak/records.hpp"

namespace cloak {

using nlohmann::json;

namespace {

std::string join_messages(const std::vector<FieldError>& errors) {
  std::string out;
  for (const auto& e : errors) {
    if (!out.empty()) out += "; ";
    out += e.field + ": " + e.message;
  }
  return out;
}

}  // namespace

RequestError::RequestError(std::vector<FieldError> errors)
    : InvalidInput(join_messages(errors)), errors_(std::move(errors)) {}

ResolvedAttack resolve_request(const Detector& detector, const std::vector<Detection>& pre_detections,
                               const AttackRequest& request) {
  std::vector<FieldError> errors;
  ResolvedAttack out;
  out.config = request.config;
  out.config.mode = request.mode;
  const AttackConfig& c = out.config;
  if (!(c.epsilon > 0.0 && c.epsilon <= 16.0 / 255.0 + 1e-12)) {
    errors.push_back({"epsilon", "must lie in (0, 16/255]"});
  }
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) errors.push_back({"threshold", "must lie in (0, 1)"});
  if (c.max_iterations < 1) errors.push_back({"max_iters", "must be at least 1"});
  if (c.step_size && !(*c.step_size > 0.0 && *c.step_size <= c.epsilon)) {
    errors.push_back({"step_size", "must lie in (0, epsilon]"});
  }

  if (request.mode == AttackMode::kSensitive) {
    for (const auto& name : request.sensitive_names) {
      const int k = detector.category_index(name);
      if (k < 0) {
        errors.push_back({"sensitive", "unknown category '" + name + "'"});
      } else if (k == detector.background_index()) {
        errors.push_back({"sensitive", "'" + name + "' is the background category"});
      } else {
        out.sensitive.insert(k);
      }
    }
    for (int index : request.sensitive_boxes) {
      if (index < 0 || index >= static_cast<int>(pre_detections.size())) {
        errors.push_back({"sensitive_boxes", "box index " + std::to_string(index) + " does not name a pre-detection"});
      } else {
        out.sensitive.insert(pre_detections[index].category);
      }
    }
    if (request.sensitive_names.empty() && request.sensitive_boxes.empty()) {
      errors.push_back({"sensitive", "select at least one sensitive category or box"});
    }
    if (request.target_name.empty()) {
      errors.push_back({"target_class", "required in sensitive mode"});
    } else {
      out.target = detector.category_index(request.target_name);
      if (out.target < 0) {
        errors.push_back({"target_class", "unknown category '" + request.target_name + "'"});
      } else if (out.sensitive.contains(out.target)) {
        errors.push_back({"target_class", "'" + request.target_name + "' is also marked sensitive"});
      }
    }
  }
  if (!errors.empty()) throw RequestError(std::move(errors));
  return out;
}

AttackResult execute_attack(const Detector& detector, const Image& image, const ResolvedAttack& attack,
                            const TraceObserver& on_trace) {
  if (attack.config.mode == AttackMode::kAll) return hide_all(detector, image, attack.config, {}, on_trace);
  return hide_sensitive(detector, image, attack.sensitive, attack.target, attack.config, {}, on_trace);
}

// ====================================================================== service

namespace {

enum class JobState { kQueued, kRunning, kDone, kFailed };

const char* state_name(JobState s) {
  switch (s) {
    case JobState::kQueued: return "queued";
    case JobState::kRunning: return "running";
    case JobState::kDone: return "done";
    case JobState::kFailed: return "failed";
  }
  return "unknown";
}

struct Job {
  std::string id;
  std::string session_id;
  ResolvedAttack attack;
  json parameters;
  JobState state = JobState::kQueued;
  std::vector<TraceRecord> trace;
  std::string error;
  AttackResult result;
  std::vector<unsigned char> png;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct Session {
  std::string id;
  std::shared_ptr<const Image> image;
  std::vector<Detection> pre_detections;
  double threshold = 0.3;
  std::deque<std::string> pending;
  bool busy = false;
  std::vector<std::string> jobs;
};

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, {{"error", message}});
}

void reply_fields(httplib::Response& res, const std::vector<FieldError>& errors) {
  json list = json::array();
  for (const auto& e : errors) list.push_back({{"field", e.field}, {"message", e.message}});
  reply(res, 422, {{"error", "invalid parameters"}, {"fields", list}});
}

double json_real(const json& v) { return std::isfinite(v.get<double>()) ? v.get<double>() : 0.0; }

// Reads the attack body into a request, collecting type errors per field.
AttackRequest parse_attack_body(const json& body, std::vector<FieldError>& errors) {
  AttackRequest r;
  if (!body.is_object()) {
    errors.push_back({"body", "must be a JSON object"});
    return r;
  }
  auto read = [&](const char* field, auto&& fn) {
    if (!body.contains(field) || body.at(field).is_null()) return;
    try {
      fn(body.at(field));
    } catch (const json::exception&) {
      errors.push_back({field, "has the wrong type"});
    } catch (const InvalidInput& ex) {
      errors.push_back({field, ex.what()});
    }
  };
  read("mode", [&](const json& v) { r.mode = attack_mode_from_string(v.get<std::string>()); });
  read("sensitive", [&](const json& v) { r.sensitive_names = v.get<std::vector<std::string>>(); });
  read("sensitive_boxes", [&](const json& v) { r.sensitive_boxes = v.get<std::vector<int>>(); });
  read("target_class", [&](const json& v) { r.target_name = v.get<std::string>(); });
  read("epsilon", [&](const json& v) {
    r.config.epsilon = v.is_string() ? parse_fraction(v.get<std::string>()) : json_real(v);
  });
  read("step_size", [&](const json& v) {
    r.config.step_size = v.is_string() ? parse_fraction(v.get<std::string>()) : json_real(v);
  });
  read("threshold", [&](const json& v) { r.config.threshold = json_real(v); });
  read("max_iters", [&](const json& v) {
    if (!v.is_number_integer()) throw json::type_error::create(302, "integer expected", nullptr);
    r.config.max_iterations = v.get<int>();
  });
  return r;
}

}  // namespace

struct Service::State {
  std::shared_ptr<const Detector> detector;
  ServiceOptions options;

  std::mutex mu;
  std::condition_variable cv;
  bool stopping = false;
  std::map<std::string, Session> sessions;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::deque<std::string> ready;  // sessions with a pending job and no running one
  std::uint64_t next_session = 1;
  std::uint64_t next_job = 1;

  std::vector<std::thread> workers;
  httplib::Server server;
  std::thread server_thread;
  bool routes_registered = false;

  void worker_loop();
  void run_job(const std::shared_ptr<Job>& job, std::shared_ptr<const Image> image);
};

void Service::State::worker_loop() {
  while (true) {
    std::shared_ptr<Job> job;
    std::shared_ptr<const Image> image;
    {
      std::unique_lock lock(mu);
      cv.wait(lock, [&] { return stopping || !ready.empty(); });
      if (stopping) return;
      Session& s = sessions.at(ready.front());
      ready.pop_front();
      job = jobs.at(s.pending.front());
      s.pending.pop_front();
      s.busy = true;
      job->state = JobState::kRunning;
      image = s.image;
    }
    run_job(job, std::move(image));
    {
      std::lock_guard lock(mu);
      Session& s = sessions.at(job->session_id);
      s.busy = false;
      if (!s.pending.empty()) ready.push_back(s.id);
    }
    cv.notify_all();
  }
}

void Service::State::run_job(const std::shared_ptr<Job>& job, std::shared_ptr<const Image> image) {
  try {
    AttackResult result = execute_attack(*detector, *image, job->attack, [&](const TraceRecord& t) {
      std::lock_guard lock(mu);
      job->trace.push_back(t);
    });
    auto png = encode_png(result.adversarial_image, BitDepth::k16);
    const double p = psnr(*image, result.adversarial_image);
    const double q = ssim(*image, result.adversarial_image);
    std::lock_guard lock(mu);
    job->result = std::move(result);
    job->png = std::move(png);
    job->psnr = p;
    job->ssim = q;
    job->state = JobState::kDone;
  } catch (const std::exception& ex) {
    std::lock_guard lock(mu);
    job->error = ex.what();
    job->state = JobState::kFailed;
  }
}

Service::Service(std::shared_ptr<const Detector> detector, ServiceOptions options)
    : state_(std::make_unique<State>()) {
  if (!detector) throw InvalidInput("service needs a detector");
  if (options.workers < 1) throw InvalidInput("service needs at least one worker");
  if (!(options.detection_threshold > 0.0 && options.detection_threshold < 1.0)) {
    throw InvalidInput("detection threshold must lie in (0,1)");
  }
  state_->detector = std::move(detector);
  state_->options = std::move(options);
  for (int i = 0; i < state_->options.workers; ++i) {
    state_->workers.emplace_back([s = state_.get()] { s->worker_loop(); });
  }
}

Service::~Service() {
  stop();
  {
    std::lock_guard lock(state_->mu);
    state_->stopping = true;
  }
  state_->cv.notify_all();
  for (auto& t : state_->workers) t.join();
}

void Service::register_routes(httplib::Server& server) {
  State* st = state_.get();
  const auto& names = st->detector->category_names();

  server.Post("/v1/sessions", [st, &names](const httplib::Request& req, httplib::Response& res) {
    std::string bytes = req.body;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("image")) return reply_fields(res, {{"image", "multipart body needs an 'image' part"}});
      bytes = req.get_file_value("image").content;
    }
    double threshold = st->options.detection_threshold;
    if (req.has_param("threshold")) {
      try {
        threshold = parse_fraction(req.get_param_value("threshold"));
      } catch (const InvalidInput& ex) {
        return reply_fields(res, {{"threshold", ex.what()}});
      }
      if (!(threshold > 0.0 && threshold < 1.0)) return reply_fields(res, {{"threshold", "must lie in (0, 1)"}});
    }
    Image image;
    try {
      image = decode_png(std::span(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
      validate_image(image, st->detector->min_image_side());
    } catch (const std::exception& ex) {
      return reply_fields(res, {{"image", ex.what()}});
    }
    const auto detections = st->detector->detect(image, threshold);
    const int width = image.width(), height = image.height();
    std::string id;
    {
      std::lock_guard lock(st->mu);
      id = "s" + std::to_string(st->next_session++);
      Session s;
      s.id = id;
      s.image = std::make_shared<const Image>(std::move(image));
      s.pre_detections = detections;
      s.threshold = threshold;
      st->sessions.emplace(id, std::move(s));
    }
    reply(res, 201,
          {{"session_id", id},
           {"width", width},
           {"height", height},
           {"threshold", threshold},
           {"detections", detections_to_json(detections, names)}});
  });

  server.Get(R"(/v1/sessions/([^/]+))", [st, &names](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(st->mu);
    const auto it = st->sessions.find(req.matches[1]);
    if (it == st->sessions.end()) return reply_error(res, 404, "unknown session");
    const Session& s = it->second;
    reply(res, 200,
          {{"session_id", s.id},
           {"width", s.image->width()},
           {"height", s.image->height()},
           {"threshold", s.threshold},
           {"detections", detections_to_json(s.pre_detections, names)},
           {"jobs", s.jobs}});
  });

  server.Post(R"(/v1/sessions/([^/]+)/attacks)", [st](const httplib::Request& req, httplib::Response& res) {
    const std::string sid = req.matches[1];
    std::vector<Detection> pre;
    {
      std::lock_guard lock(st->mu);
      const auto it = st->sessions.find(sid);
      if (it == st->sessions.end()) return reply_error(res, 404, "unknown session");
      pre = it->second.pre_detections;
    }
    json body;
    try {
      body = json::parse(req.body.empty() ? std::string("{}") : req.body);
    } catch (const json::parse_error&) {
      return reply_fields(res, {{"body", "malformed JSON"}});
    }
    std::vector<FieldError> errors;
    AttackRequest request = parse_attack_body(body, errors);
    if (!errors.empty()) return reply_fields(res, errors);
    ResolvedAttack attack;
    try {
      attack = resolve_request(*st->detector, pre, request);
    } catch (const RequestError& ex) {
      return reply_fields(res, ex.errors());
    }
    auto job = std::make_shared<Job>();
    job->session_id = sid;
    job->attack = attack;
    job->parameters = {{"mode", to_string(attack.config.mode)},
                       {"sensitive", attack.sensitive},
                       {"target_category", attack.target},
                       {"epsilon", attack.config.epsilon},
                       {"threshold", attack.config.threshold},
                       {"max_iters", attack.config.max_iterations}};
    {
      std::lock_guard lock(st->mu);
      Session& s = st->sessions.at(sid);
      if (!st->options.queueing && (s.busy || !s.pending.empty())) {
        return reply_error(res, 409, "session already has an attack job queued or running");
      }
      job->id = "j" + std::to_string(st->next_job++);
      st->jobs.emplace(job->id, job);
      s.jobs.push_back(job->id);
      s.pending.push_back(job->id);
      if (!s.busy && s.pending.size() == 1) st->ready.push_back(sid);
      reply(res, 202, {{"job_id", job->id}, {"session_id", sid}, {"state", state_name(job->state)}});
    }
    st->cv.notify_all();
  });

  server.Get(R"(/v1/jobs/([^/]+))", [st](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(st->mu);
    const auto it = st->jobs.find(req.matches[1]);
    if (it == st->jobs.end()) return reply_error(res, 404, "unknown job");
    const Job& j = *it->second;
    json body = {{"job_id", j.id},
                 {"session_id", j.session_id},
                 {"state", state_name(j.state)},
                 {"parameters", j.parameters},
                 {"trace", trace_to_json(j.trace)}};
    if (j.state == JobState::kFailed) body["error"] = j.error;
    reply(res, 200, body);
  });

  server.Get(R"(/v1/jobs/([^/]+)/result)", [st, &names](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(st->mu);
    const auto it = st->jobs.find(req.matches[1]);
    if (it == st->jobs.end()) return reply_error(res, 404, "unknown job");
    const Job& j = *it->second;
    if (j.state != JobState::kDone) {
      json body = {{"error", "job has no result"}, {"state", state_name(j.state)}};
      if (j.state == JobState::kFailed) body["reason"] = j.error;
      return reply(res, 409, body);
    }
    json record = attack_record_json(j.attack.config, j.result, names);
    record["job_id"] = j.id;
    record["psnr"] = std::isfinite(j.psnr) ? json(j.psnr) : json(nullptr);
    record["ssim"] = j.ssim;
    record["image_url"] = "/v1/jobs/" + j.id + "/result/image";
    reply(res, 200, record);
  });

  server.Get(R"(/v1/jobs/([^/]+)/result/image)", [st](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(st->mu);
    const auto it = st->jobs.find(req.matches[1]);
    if (it == st->jobs.end()) return reply_error(res, 404, "unknown job");
    const Job& j = *it->second;
    if (j.state != JobState::kDone) return reply(res, 409, {{"error", "job has no result"}, {"state", state_name(j.state)}});
    res.status = 200;
    res.set_content(std::string(j.png.begin(), j.png.end()), "image/png");
  });
}

bool Service::listen() {
  if (!state_->routes_registered) {
    register_routes(state_->server);
    state_->routes_registered = true;
  }
  return state_->server.listen(state_->options.host, state_->options.port);
}

int Service::start_background() {
  if (!state_->routes_registered) {
    register_routes(state_->server);
    state_->routes_registered = true;
  }
  const int port = state_->server.bind_to_any_port(state_->options.host);
  if (port < 0) throw InvalidInput("cannot bind " + state_->options.host);
  state_->server_thread = std::thread([s = state_.get()] { s->server.listen_after_bind(); });
  state_->server.wait_until_ready();
  return port;
}

void Service::stop() {
  state_->server.stop();
  if (state_->server_thread.joinable()) state_->server_thread.join();
}

}  // namespace cloak
