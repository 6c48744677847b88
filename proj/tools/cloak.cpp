// Command-line front end: protect images, evaluate and sweep over a corpus,
// serve the /v1 HTTP API, and build the toy detector and corpora.
#include <algorithm>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <json.hpp>

#include "cloak/dataset.hpp"
#include "cloak/errors.hpp"
#include "cloak/harness.hpp"
#include "cloak/image_io.hpp"
#include "cloak/metrics.hpp"
#include "cloak/params.hpp"
#include "cloak/records.hpp"
#include "cloak/service.hpp"
#include "cloak/toy_detector.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cloak;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::string default_detector() {
  if (const char* env = std::getenv("CLOAK_DETECTOR")) return env;
  return CLOAK_DEFAULT_DETECTOR;
}

struct AttackFlags {
  std::string mode = "all";
  std::string epsilon = "3/255";
  std::string step_size;
  double threshold = 0.3;
  int max_iters = 150;
  std::vector<std::string> sensitive;
  std::string target_class;
};

void add_attack_flags(CLI::App* cmd, AttackFlags& f) {
  cmd->add_option("--mode", f.mode, "all | sensitive")->check(CLI::IsMember({"all", "sensitive"}));
  cmd->add_option("--epsilon", f.epsilon, "per-step bound, e.g. 3/255 or 0.0118");
  cmd->add_option("--step-size", f.step_size, "signed-gradient step (defaults to epsilon)");
  cmd->add_option("--threshold", f.threshold, "detection threshold T");
  cmd->add_option("--max-iters", f.max_iters, "iteration budget I");
  cmd->add_option("--sensitive", f.sensitive, "sensitive category names (sensitive mode)");
  cmd->add_option("--target-class", f.target_class, "category the sensitive objects are disguised as");
}

AttackRequest to_request(const AttackFlags& f) {
  AttackRequest r;
  r.mode = attack_mode_from_string(f.mode);
  r.config.mode = r.mode;
  r.config.epsilon = parse_fraction(f.epsilon);
  if (!f.step_size.empty()) r.config.step_size = parse_fraction(f.step_size);
  r.config.threshold = f.threshold;
  r.config.max_iterations = f.max_iters;
  r.sensitive_names = f.sensitive;
  r.target_name = f.target_class;
  return r;
}

std::vector<fs::path> collect_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".png") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  return files;
}

int run_protect(const std::string& detector_path, const AttackFlags& flags, const std::vector<std::string>& inputs,
                const std::string& out_dir) {
  const ToyDetector detector = ToyDetector::load(detector_path);
  const AttackRequest request = to_request(flags);
  // Validate names and numbers once, before touching any image.
  resolve_request(detector, {}, request);
  fs::create_directories(out_dir);
  json summary = json::array();
  bool all_ok = true;
  for (const auto& file : collect_inputs(inputs)) {
    Image image;
    try {
      image = read_png(file);
    } catch (const std::exception& ex) {
      std::cerr << "error: " << file.string() << ": " << ex.what() << '\n';
      return kExitFailure;
    }
    const auto pre = detector.detect(image, request.config.threshold);
    const ResolvedAttack attack = resolve_request(detector, pre, request);
    json entry = {{"input", file.string()}};
    try {
      const AttackResult result = execute_attack(detector, image, attack);
      const fs::path out = fs::path(out_dir) / file.filename();
      write_png(out, result.adversarial_image, BitDepth::k16);
      entry.update(attack_record_json(attack.config, result, detector.category_names()));
      entry["output"] = out.string();
      entry["pre_detections"] = detections_to_json(pre, detector.category_names());
      const double p = psnr(image, result.adversarial_image);
      entry["psnr"] = std::isfinite(p) ? json(p) : json(nullptr);
      entry["ssim"] = ssim(image, result.adversarial_image);
      all_ok = all_ok && result.succeeded;
      std::cout << file.filename().string() << ": " << (result.succeeded ? "protected" : "NOT protected") << " after "
                << result.iterations_used << " iterations, " << result.final_detections.size()
                << " detections remain\n";
    } catch (const AttackError& ex) {
      entry["error"] = ex.what();
      all_ok = false;
      std::cout << file.filename().string() << ": skipped: " << ex.what() << '\n';
    }
    summary.push_back(std::move(entry));
  }
  std::ofstream(fs::path(out_dir) / "summary.json") << summary.dump(1) << '\n';
  return all_ok ? 0 : kExitFailure;
}

struct EvalFlags {
  std::string dataset;
  std::string out = "report";
  std::string policy = "fixed";
  std::vector<std::string> baselines = {"low_brightness", "gaussian_blur", "mosaic", "additive_noise",
                                        "jpeg_compression"};
  bool no_attack = false;
  std::uint64_t seed = 0;
  std::size_t sample = 0;
  int workers = 0;
};

void add_eval_flags(CLI::App* cmd, EvalFlags& f) {
  cmd->add_option("--dataset", f.dataset, "annotations.json, a directory holding it, or a PNG directory")
      ->required();
  cmd->add_option("--out,-o", f.out, "report directory");
  cmd->add_option("--sensitive-policy", f.policy, "fixed | per_image | all_pre_detected");
  cmd->add_option("--baselines", f.baselines, "baseline methods, optionally method=parameter");
  cmd->add_flag("--no-attack", f.no_attack, "run the baselines only");
  cmd->add_option("--seed", f.seed, "seed for image sampling and noise");
  cmd->add_option("--sample", f.sample, "evaluate a seeded random subset of this size");
  cmd->add_option("--workers", f.workers, "parallel images (0 = all cores)");
}

RunConfig to_run_config(const Detector& detector, const AttackFlags& a, const EvalFlags& e) {
  const AttackRequest request = to_request(a);
  RunConfig c;
  c.attack = request.config;
  c.run_attack = !e.no_attack;
  for (const auto& spec : e.baselines) {
    if (spec == "none") continue;
    const auto eq = spec.find('=');
    BaselineSpec b = BaselineSpec::defaults(baseline_method_from_string(spec.substr(0, eq)));
    if (eq != std::string::npos) b.parameter = parse_fraction(spec.substr(eq + 1));
    c.baselines.push_back(b);
  }
  c.sensitive_policy = sensitive_policy_from_string(e.policy);
  if (c.attack.mode == AttackMode::kSensitive) {
    if (c.sensitive_policy == SensitivePolicy::kFixed) {
      const ResolvedAttack r = resolve_request(detector, {}, request);
      c.sensitive_categories = r.sensitive;
      c.target_category = r.target;
    } else {
      c.target_category = detector.category_index(a.target_class);
      if (c.target_category < 0) throw InvalidInput("unknown target class '" + a.target_class + "'");
    }
  }
  c.seed = e.seed;
  if (e.sample > 0) c.sample_size = e.sample;
  c.workers = e.workers;
  return c;
}

void print_aggregates(const EvaluationReport& report) {
  for (const auto& row : report.aggregates) {
    std::cout << row.method;
    if (row.sweep_value) std::cout << " @ " << *row.sweep_value;
    std::cout << ": success " << row.success_rate << ", leakage ";
    if (row.leakage_rate) {
      std::cout << *row.leakage_rate;
    } else {
      std::cout << "n/a";
    }
    std::cout << ", PSNR " << row.mean_psnr << ", SSIM " << row.mean_ssim << " (" << row.images << " images)\n";
  }
  if (report.skipped > 0) std::cout << report.skipped << " images skipped\n";
}

int run_evaluate(const std::string& detector_path, const AttackFlags& a, const EvalFlags& e,
                 const std::string& param, const std::string& values) {
  const ToyDetector detector = ToyDetector::load(detector_path);
  const RunConfig config = to_run_config(detector, a, e);
  const DatasetManifest manifest = load_dataset(e.dataset, detector.category_names());
  for (const auto& name : manifest.unmapped_categories) {
    std::cerr << "warning: dataset category '" << name << "' is unknown to the detector\n";
  }
  try {
    const EvaluationReport report = param.empty()
                                        ? run_batch(detector, manifest, config)
                                        : sweep_parameter(detector, manifest, config, param, parse_value_list(values));
    write_report(report, e.out);
    print_aggregates(report);
    std::cout << "report written to " << e.out << '\n';
  } catch (const BatchAborted& ex) {
    write_report(ex.partial(), e.out);
    std::cerr << "error: " << ex.what() << " (partial report written to " << e.out << ")\n";
    return kExitFailure;
  }
  return 0;
}

int run_train(const std::string& out, std::uint64_t first_seed, int count, std::uint64_t seed) {
  const auto corpus = make_corpus(SceneOptions{}, first_seed, count);
  TrainConfig tc;
  tc.seed = seed;
  const ToyDetector detector = ToyDetector::train(corpus, toy_category_names(), ToyDetectorConfig{}, tc);
  fs::create_directories(fs::path(out).parent_path().empty() ? fs::path(".") : fs::path(out).parent_path());
  detector.save(out);
  std::cout << "trained on " << count << " scenes; checkpoint written to " << out << '\n';
  return 0;
}

Service* g_service = nullptr;

void handle_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cloak: hide objects from a two-stage detector with bounded perturbations"};
  app.require_subcommand(1);
  std::string detector_path = default_detector();

  AttackFlags protect_flags;
  std::vector<std::string> inputs;
  std::string protect_out = "protected";
  auto* protect = app.add_subcommand("protect", "perturb images so the detector stops seeing objects");
  add_attack_flags(protect, protect_flags);
  protect->add_option("--detector", detector_path, "detector checkpoint");
  protect->add_option("inputs", inputs, "PNG files or directories")->required();
  protect->add_option("--out,-o", protect_out, "output directory");

  AttackFlags eval_attack;
  EvalFlags eval_flags;
  auto* evaluate = app.add_subcommand("evaluate", "attack and baselines over a corpus, with a report");
  add_attack_flags(evaluate, eval_attack);
  add_eval_flags(evaluate, eval_flags);
  evaluate->add_option("--detector", detector_path, "detector checkpoint");

  AttackFlags sweep_attack;
  EvalFlags sweep_flags;
  std::string param, values;
  auto* sweep = app.add_subcommand("sweep", "repeat the evaluation over a parameter range");
  add_attack_flags(sweep, sweep_attack);
  add_eval_flags(sweep, sweep_flags);
  sweep->add_option("--detector", detector_path, "detector checkpoint");
  sweep->add_option("--param", param, "epsilon | threshold | a baseline method name")->required();
  sweep->add_option("--values", values, "comma list or range such as 1/255..10/255")->required();

  ServiceOptions service_options;
  auto* serve = app.add_subcommand("serve", "run the local /v1 HTTP service");
  serve->add_option("--detector", detector_path, "detector checkpoint");
  serve->add_option("--port", service_options.port, "TCP port on 127.0.0.1");
  serve->add_option("--workers", service_options.workers, "attack jobs running at once");
  bool no_queue = false;
  serve->add_flag("--no-queue", no_queue, "reject a second job for a busy session with 409");

  std::string train_out = "models/toy_detector.ckpt";
  std::uint64_t train_first = 1000, train_seed = 7;
  int train_count = 400;
  auto* train = app.add_subcommand("train", "train the toy detector on generated scenes");
  train->add_option("--out,-o", train_out, "checkpoint path");
  train->add_option("--first-seed", train_first, "seed of the first training scene");
  train->add_option("--count", train_count, "number of training scenes");
  train->add_option("--seed", train_seed, "training seed");

  std::string corpus_out = "corpus";
  std::uint64_t corpus_first = 900000;
  int corpus_count = 20;
  auto* corpus = app.add_subcommand("make-corpus", "render a scene corpus with annotations.json");
  corpus->add_option("--out,-o", corpus_out, "output directory");
  corpus->add_option("--first-seed", corpus_first, "seed of the first scene");
  corpus->add_option("--count", corpus_count, "number of scenes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*protect) return run_protect(detector_path, protect_flags, inputs, protect_out);
    if (*evaluate) return run_evaluate(detector_path, eval_attack, eval_flags, "", "");
    if (*sweep) return run_evaluate(detector_path, sweep_attack, sweep_flags, param, values);
    if (*serve) {
      service_options.queueing = !no_queue;
      Service service(std::make_shared<ToyDetector>(ToyDetector::load(detector_path)), service_options);
      g_service = &service;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      std::cout << "serving on http://" << service_options.host << ':' << service_options.port << "/v1\n";
      if (!service.listen()) {
        std::cerr << "error: cannot listen on port " << service_options.port << '\n';
        return kExitFailure;
      }
      g_service = nullptr;
      return 0;
    }
    if (*train) return run_train(train_out, train_first, train_count, train_seed);
    if (*corpus) {
      write_dataset(corpus_out, make_corpus(SceneOptions{}, corpus_first, corpus_count), toy_category_names());
      std::cout << "wrote " << corpus_count << " scenes to " << corpus_out << '\n';
      return 0;
    }
  } catch (const RequestError& ex) {
    for (const auto& e : ex.errors()) {
      std::string flag = e.field;
      std::replace(flag.begin(), flag.end(), '_', '-');
      std::cerr << "error: --" << flag << ": " << e.message << '\n';
    }
    return kExitUsage;
  } catch (const InvalidInput& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitFailure;
  }
  return 0;
}
