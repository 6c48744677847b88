#include "cloak/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "cloak/errors.hpp"
#include "cloak/image_io.hpp"

namespace cloak {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(SensitivePolicy policy) {
  switch (policy) {
    case SensitivePolicy::kFixed: return "fixed";
    case SensitivePolicy::kPerImage: return "per_image";
    case SensitivePolicy::kAllPreDetected: return "all_pre_detected";
  }
  return "unknown";
}

SensitivePolicy sensitive_policy_from_string(const std::string& name) {
  for (auto p : {SensitivePolicy::kFixed, SensitivePolicy::kPerImage, SensitivePolicy::kAllPreDetected}) {
    if (to_string(p) == name) return p;
  }
  throw InvalidInput("unknown sensitive policy '" + name + "'");
}

void RunConfig::validate(int category_count, int background_index) const {
  attack.validate();
  criterion.validate();
  for (const auto& b : baselines) b.validate();
  if (!run_attack && baselines.empty()) throw InvalidInput("run config: nothing to run (no attack, no baselines)");
  if (ssim.window < 1 || !(ssim.peak > 0.0)) throw InvalidInput("run config: invalid SSIM parameters");
  if (sample_size && *sample_size == 0) throw InvalidInput("run config: sample_size must be positive");
  if (workers < 0) throw InvalidInput("run config: workers must be non-negative");
  auto check_category = [&](int c, const char* field) {
    if (c < 0 || c >= category_count) {
      throw InvalidInput(std::string("run config: ") + field + " category " + std::to_string(c) + " out of range");
    }
    if (c == background_index && std::string(field) != "target") {
      throw InvalidInput(std::string("run config: ") + field + " cannot be the background category");
    }
  };
  if (attack.mode == AttackMode::kSensitive) {
    check_category(target_category, "target");
    if (sensitive_policy == SensitivePolicy::kFixed) {
      if (sensitive_categories.empty()) throw InvalidInput("run config: sensitive categories are empty");
      if (sensitive_categories.contains(target_category)) {
        throw InvalidInput("run config: target category must not be sensitive");
      }
    }
    for (int c : sensitive_categories) check_category(c, "sensitive");
    for (const auto& [id, cats] : per_image_sensitive) {
      for (int c : cats) check_category(c, "sensitive");
    }
  }
}

const MethodRecord* ImageRecord::method(const std::string& name) const {
  for (const auto& m : methods) {
    if (m.method == name) return &m;
  }
  return nullptr;
}

std::vector<ImageOutcome> outcomes_for(const EvaluationReport& report, const std::string& method,
                                       std::optional<double> sweep_value) {
  std::vector<ImageOutcome> out;
  for (const auto& r : report.records) {
    if (r.skipped || r.sweep_value != sweep_value) continue;
    const MethodRecord* m = r.method(method);
    if (!m) continue;
    ImageOutcome o;
    o.image_id = r.id;
    o.mode = report.config.attack.mode;
    o.original_detections = r.original_detections;
    o.adversarial_detections = m->detections;
    if (o.mode == AttackMode::kSensitive) o.sensitive_categories = r.sensitive_categories;
    o.ground_truth = r.ground_truth;
    out.push_back(std::move(o));
  }
  return out;
}

std::vector<AggregateRow> compute_aggregates(const EvaluationReport& report) {
  std::vector<std::optional<double>> sweep_values;
  std::vector<std::string> methods;
  for (const auto& r : report.records) {
    if (std::find(sweep_values.begin(), sweep_values.end(), r.sweep_value) == sweep_values.end()) {
      sweep_values.push_back(r.sweep_value);
    }
    for (const auto& m : r.methods) {
      if (std::find(methods.begin(), methods.end(), m.method) == methods.end()) methods.push_back(m.method);
    }
  }
  const auto& cfg = report.config;
  std::vector<AggregateRow> rows;
  for (const auto& sv : sweep_values) {
    for (const auto& method : methods) {
      const auto outcomes = outcomes_for(report, method, sv);
      AggregateRow row;
      row.method = method;
      row.sweep_value = sv;
      row.images = outcomes.size();
      if (outcomes.empty()) {
        row.leakage_degenerate = true;
        rows.push_back(row);
        continue;
      }
      if (cfg.attack.mode == AttackMode::kAll) {
        row.success_rate = success_rate_all(outcomes).value;
        const Rate leak = leakage_all(outcomes);
        row.leakage_rate = leak.value;
        row.leakage_degenerate = leak.degenerate;
      } else {
        const Rate success = success_rate_sensitive(outcomes, cfg.criterion);
        row.success_rate = success.value;
        row.success_presence_fallback = success.presence_fallback;
        const bool have_truth = std::all_of(outcomes.begin(), outcomes.end(),
                                            [](const ImageOutcome& o) { return o.ground_truth.has_value(); });
        if (have_truth) {
          const Rate leak = leakage_sensitive(outcomes, cfg.criterion);
          row.leakage_rate = leak.value;
          row.leakage_degenerate = leak.degenerate;
        }
      }
      double psnr_sum = 0.0, ssim_sum = 0.0;
      std::size_t finite = 0;
      for (const auto& r : report.records) {
        if (r.skipped || r.sweep_value != sv) continue;
        const MethodRecord* m = r.method(method);
        if (!m) continue;
        if (std::isfinite(m->psnr)) {
          psnr_sum += m->psnr;
          ++finite;
        } else {
          ++row.identical_outputs;
        }
        ssim_sum += m->ssim;
      }
      row.mean_psnr = finite == 0 ? std::numeric_limits<double>::infinity() : psnr_sum / static_cast<double>(finite);
      row.mean_ssim = ssim_sum / static_cast<double>(outcomes.size());
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------- JSON

namespace {

json real(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double real_from(const json& v, double when_null = std::numeric_limits<double>::infinity()) {
  return v.is_null() ? when_null : v.get<double>();
}

json optional_real(const std::optional<double>& v) { return v ? real(*v) : json(nullptr); }

std::optional<double> optional_real_from(const json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

json box_json(const Box& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

Box box_from(const json& j) { return Box{j.at(0), j.at(1), j.at(2), j.at(3)}; }

json detections_json(const std::vector<Detection>& dets) {
  json a = json::array();
  for (const auto& d : dets) a.push_back({{"box", box_json(d.box)}, {"category", d.category}, {"score", d.score}});
  return a;
}

std::vector<Detection> detections_from(const json& a) {
  std::vector<Detection> out;
  for (const auto& d : a) out.push_back({box_from(d.at("box")), d.at("category"), d.at("score")});
  return out;
}

json config_json(const RunConfig& c) {
  json baselines = json::array();
  for (const auto& b : c.baselines) {
    baselines.push_back({{"method", to_string(b.method)}, {"parameter", b.parameter}, {"seed", b.seed}});
  }
  json per_image = json::object();
  for (const auto& [id, cats] : c.per_image_sensitive) per_image[id] = cats;
  return {
      {"attack",
       {{"mode", to_string(c.attack.mode)},
        {"epsilon", c.attack.epsilon},
        {"threshold", c.attack.threshold},
        {"max_iterations", c.attack.max_iterations},
        {"step_size", optional_real(c.attack.step_size)},
        {"total_budget", optional_real(c.attack.total_budget)}}},
      {"run_attack", c.run_attack},
      {"baselines", baselines},
      {"sensitive_policy", to_string(c.sensitive_policy)},
      {"sensitive_categories", c.sensitive_categories},
      {"per_image_sensitive", per_image},
      {"target_category", c.target_category},
      {"criterion",
       {{"iou_threshold", c.criterion.iou_threshold}, {"require_category_match", c.criterion.require_category_match}}},
      {"ssim", {{"window", c.ssim.window}, {"peak", c.ssim.peak}, {"k1", c.ssim.k1}, {"k2", c.ssim.k2}}},
      {"seed", c.seed},
      {"sample_size", c.sample_size ? json(*c.sample_size) : json(nullptr)},
      {"workers", c.workers},
  };
}

RunConfig config_from(const json& j) {
  RunConfig c;
  const json& a = j.at("attack");
  c.attack.mode = attack_mode_from_string(a.at("mode"));
  c.attack.epsilon = a.at("epsilon");
  c.attack.threshold = a.at("threshold");
  c.attack.max_iterations = a.at("max_iterations");
  c.attack.step_size = optional_real_from(a.at("step_size"));
  c.attack.total_budget = optional_real_from(a.at("total_budget"));
  c.run_attack = j.at("run_attack");
  for (const auto& b : j.at("baselines")) {
    c.baselines.push_back({baseline_method_from_string(b.at("method")), b.at("parameter"), b.at("seed")});
  }
  c.sensitive_policy = sensitive_policy_from_string(j.at("sensitive_policy"));
  c.sensitive_categories = j.at("sensitive_categories").get<std::set<int>>();
  for (const auto& [id, cats] : j.at("per_image_sensitive").items()) c.per_image_sensitive[id] = cats.get<std::set<int>>();
  c.target_category = j.at("target_category");
  c.criterion.iou_threshold = j.at("criterion").at("iou_threshold");
  c.criterion.require_category_match = j.at("criterion").at("require_category_match");
  const json& s = j.at("ssim");
  c.ssim = {s.at("window"), s.at("peak"), s.at("k1"), s.at("k2")};
  c.seed = j.at("seed");
  if (!j.at("sample_size").is_null()) c.sample_size = j.at("sample_size").get<std::size_t>();
  c.workers = j.at("workers");
  return c;
}

json record_json(const ImageRecord& r) {
  json methods = json::array();
  for (const auto& m : r.methods) {
    json mj = {{"method", m.method},
               {"detections", detections_json(m.detections)},
               {"psnr", real(m.psnr)},
               {"ssim", m.ssim}};
    if (m.method == kAdversarialMethod) {
      mj["candidates"] = detections_json(m.candidates);
      mj["attack_succeeded"] = m.attack_succeeded;
      mj["iterations"] = m.iterations;
      mj["image_file"] = m.image_file;
    }
    methods.push_back(std::move(mj));
  }
  json gt = nullptr;
  if (r.ground_truth) {
    gt = json::array();
    for (const auto& a : *r.ground_truth) gt.push_back({{"box", box_json(a.box)}, {"category", a.category}});
  }
  return {{"id", r.id},
          {"sweep_value", optional_real(r.sweep_value)},
          {"skipped", r.skipped},
          {"skip_reason", r.skip_reason},
          {"original_detections", detections_json(r.original_detections)},
          {"original_candidates", detections_json(r.original_candidates)},
          {"sensitive_categories", r.sensitive_categories},
          {"ground_truth", gt},
          {"methods", methods}};
}

ImageRecord record_from(const json& j) {
  ImageRecord r;
  r.id = j.at("id");
  r.sweep_value = optional_real_from(j.at("sweep_value"));
  r.skipped = j.at("skipped");
  r.skip_reason = j.at("skip_reason");
  r.original_detections = detections_from(j.at("original_detections"));
  r.original_candidates = detections_from(j.at("original_candidates"));
  r.sensitive_categories = j.at("sensitive_categories").get<std::set<int>>();
  if (!j.at("ground_truth").is_null()) {
    r.ground_truth.emplace();
    for (const auto& a : j.at("ground_truth")) r.ground_truth->push_back({box_from(a.at("box")), a.at("category")});
  }
  for (const auto& mj : j.at("methods")) {
    MethodRecord m;
    m.method = mj.at("method");
    m.detections = detections_from(mj.at("detections"));
    m.psnr = real_from(mj.at("psnr"));
    m.ssim = mj.at("ssim");
    if (m.method == kAdversarialMethod) {
      m.candidates = detections_from(mj.at("candidates"));
      m.attack_succeeded = mj.at("attack_succeeded");
      m.iterations = mj.at("iterations");
      m.image_file = mj.at("image_file");
    }
    r.methods.push_back(std::move(m));
  }
  return r;
}

json aggregate_json(const AggregateRow& a) {
  return {{"method", a.method},
          {"sweep_value", optional_real(a.sweep_value)},
          {"images", a.images},
          {"success_rate", a.success_rate},
          {"leakage_rate", optional_real(a.leakage_rate)},
          {"leakage_degenerate", a.leakage_degenerate},
          {"success_presence_fallback", a.success_presence_fallback},
          {"mean_psnr", real(a.mean_psnr)},
          {"mean_ssim", a.mean_ssim},
          {"identical_outputs", a.identical_outputs}};
}

AggregateRow aggregate_from(const json& j) {
  AggregateRow a;
  a.method = j.at("method");
  a.sweep_value = optional_real_from(j.at("sweep_value"));
  a.images = j.at("images");
  a.success_rate = j.at("success_rate");
  a.leakage_rate = optional_real_from(j.at("leakage_rate"));
  a.leakage_degenerate = j.at("leakage_degenerate");
  a.success_presence_fallback = j.at("success_presence_fallback");
  a.mean_psnr = real_from(j.at("mean_psnr"));
  a.mean_ssim = j.at("mean_ssim");
  a.identical_outputs = j.at("identical_outputs");
  return a;
}

json curve_json(const SweepCurve& c) {
  json points = json::array();
  for (const auto& p : c.points) {
    points.push_back({{"value", p.value},
                      {"success_rate", p.success_rate},
                      {"leakage_rate", optional_real(p.leakage_rate)},
                      {"mean_psnr", real(p.mean_psnr)},
                      {"mean_ssim", p.mean_ssim}});
  }
  return {{"parameter", c.parameter}, {"method", c.method}, {"points", points}};
}

SweepCurve curve_from(const json& j) {
  SweepCurve c;
  c.parameter = j.at("parameter");
  c.method = j.at("method");
  for (const auto& p : j.at("points")) {
    c.points.push_back({p.at("value"), p.at("success_rate"), optional_real_from(p.at("leakage_rate")),
                        real_from(p.at("mean_psnr")), p.at("mean_ssim")});
  }
  return c;
}

json aggregates_array(const std::vector<AggregateRow>& rows) {
  json a = json::array();
  for (const auto& row : rows) a.push_back(aggregate_json(row));
  return a;
}

std::string csv_real(double v) {
  if (!std::isfinite(v)) return v > 0 ? "inf" : "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_optional(const std::optional<double>& v) { return v ? csv_real(*v) : ""; }

std::string row_label(const AggregateRow& row) {
  return row.sweep_value ? row.method + " @ " + csv_real(*row.sweep_value) : row.method;
}

}  // namespace

std::string aggregates_json(const EvaluationReport& report) { return aggregates_array(report.aggregates).dump(1); }

void write_report(const EvaluationReport& report, const fs::path& directory) {
  fs::create_directories(directory);
  json records = json::array();
  for (const auto& r : report.records) {
    records.push_back(record_json(r));
    for (const auto& m : r.methods) {
      if (m.image_file.empty() || m.image.empty()) continue;
      const fs::path file = directory / m.image_file;
      fs::create_directories(file.parent_path());
      write_png(file, m.image, BitDepth::k16);
    }
  }
  json curves = json::array();
  for (const auto& c : report.curves) curves.push_back(curve_json(c));
  const json doc = {{"format_version", report.format_version},
                    {"config", config_json(report.config)},
                    {"category_names", report.category_names},
                    {"skipped", report.skipped},
                    {"ground_truth_missing", report.ground_truth_missing},
                    {"aggregates", aggregates_array(report.aggregates)},
                    {"curves", curves},
                    {"records", records}};
  {
    std::ofstream out(directory / "report.json");
    if (!out) throw LoadError("cannot write " + (directory / "report.json").string());
    out << doc.dump(1) << '\n';
  }
  {
    std::ofstream out(directory / "tables.csv");
    out << "method,sweep_value,images,success_rate,leakage_rate,mean_psnr,mean_ssim,identical_outputs\n";
    for (const auto& a : report.aggregates) {
      out << a.method << ',' << csv_optional(a.sweep_value) << ',' << a.images << ',' << csv_real(a.success_rate)
          << ',' << csv_optional(a.leakage_rate) << ',' << csv_real(a.mean_psnr) << ',' << csv_real(a.mean_ssim)
          << ',' << a.identical_outputs << '\n';
    }
  }
  if (!report.curves.empty()) {
    std::ofstream out(directory / "curves.csv");
    out << "parameter,method,value,success_rate,leakage_rate,mean_psnr,mean_ssim\n";
    for (const auto& c : report.curves) {
      for (const auto& p : c.points) {
        out << c.parameter << ',' << c.method << ',' << csv_real(p.value) << ',' << csv_real(p.success_rate) << ','
            << csv_optional(p.leakage_rate) << ',' << csv_real(p.mean_psnr) << ',' << csv_real(p.mean_ssim) << '\n';
      }
    }
  }
}

EvaluationReport read_report(const fs::path& directory) {
  const fs::path file = directory / "report.json";
  std::ifstream in(file);
  if (!in) throw LoadError("cannot read " + file.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& ex) {
    throw LoadError(file.string() + ": malformed JSON: " + ex.what());
  }
  if (!doc.is_object() || !doc.contains("format_version") || !doc.at("format_version").is_number_integer()) {
    throw LoadError(file.string() + ": missing format_version");
  }
  const int version = doc.at("format_version");
  if (version != kReportFormatVersion) {
    throw VersionError(file.string() + ": report format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kReportFormatVersion) + ")");
  }
  EvaluationReport report;
  std::vector<AggregateRow> stored;
  try {
    report.config = config_from(doc.at("config"));
    report.category_names = doc.at("category_names").get<std::vector<std::string>>();
    report.skipped = doc.at("skipped");
    report.ground_truth_missing = doc.at("ground_truth_missing");
    for (const auto& r : doc.at("records")) report.records.push_back(record_from(r));
    for (const auto& a : doc.at("aggregates")) stored.push_back(aggregate_from(a));
    for (const auto& c : doc.at("curves")) report.curves.push_back(curve_from(c));
  } catch (const json::exception& ex) {
    throw LoadError(file.string() + ": " + ex.what());
  } catch (const InvalidInput& ex) {
    throw LoadError(file.string() + ": " + ex.what());
  }
  for (auto& r : report.records) {
    for (auto& m : r.methods) {
      if (m.image_file.empty()) continue;
      const fs::path image = directory / m.image_file;
      if (!fs::exists(image)) throw LoadError(file.string() + ": missing image " + m.image_file);
      m.image = read_png(image);
    }
  }

  const auto recomputed = compute_aggregates(report);
  if (recomputed.size() != stored.size()) {
    throw LoadError(file.string() + ": " + std::to_string(stored.size()) + " aggregate rows stored but " +
                    std::to_string(recomputed.size()) + " recomputed from the records");
  }
  for (std::size_t i = 0; i < stored.size(); ++i) {
    // Compare serialized forms so that infinities and nulls compare as stored.
    if (aggregate_json(stored[i]) != aggregate_json(recomputed[i])) {
      throw LoadError(file.string() + ": aggregate row '" + row_label(stored[i]) +
                      "' does not match its per-image records");
    }
  }
  const auto skipped = static_cast<std::size_t>(
      std::count_if(report.records.begin(), report.records.end(), [](const ImageRecord& r) { return r.skipped; }));
  if (skipped != report.skipped) throw LoadError(file.string() + ": skipped count does not match the records");
  report.aggregates = stored;
  return report;
}

}  // namespace cloak
