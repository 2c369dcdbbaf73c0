#include "promptseg/cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <functional>
#include <optional>
#include <pthread.h>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "promptseg/checkpoint.hpp"
#include "promptseg/cine.hpp"
#include "promptseg/config_io.hpp"
#include "promptseg/dataset.hpp"
#include "promptseg/distiller.hpp"
#include "promptseg/image_io.hpp"
#include "promptseg/metrics.hpp"
#include "promptseg/service.hpp"
#include "promptseg/synth.hpp"
#include "promptseg/trainer.hpp"

namespace promptseg {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct EvalSettings {
  int budget = 10;
  int cap = 20;
  std::string start_mode = "point";
  std::string split;
};

struct TrackSettings {
  std::string tracker = "previous";
  double floor = 0.90;
  int click_budget = 10;
};

struct ServeSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  int idle_timeout_minutes = 30;
  std::string tracker = "previous";
  double floor = 0.90;
  std::string export_dir;
  std::string static_dir;
};

struct SynthgenSettings {
  std::string kind = "images";
  int count = 100;
  std::string split = "train";
};

/// Merged configuration of one invocation. Only the sections used by the command are
/// accepted from a config file and written to run_config.json.
struct RunConfig {
  std::string command;
  std::uint64_t seed = 0;
  int workers = 1;
  fs::path out;
  json inputs = json::object();

  SynthgenSettings synthgen;
  SynthConfig synth;
  CineConfig cine;
  ModelConfig model;
  TrainConfig train;
  SamplerConfig sampler;
  LossConfig loss;
  DistillConfig distill;
  EvalSettings eval;
  TrackSettings track;
  ServeSettings serve;
};

const std::map<std::string, std::vector<std::string>> &command_sections()
{
  static const std::map<std::string, std::vector<std::string>> sections = {
      {"synthgen", {"synthgen", "synth", "cine"}},
      {"train", {"model", "train", "sampler", "loss"}},
      {"distill", {"distill", "sampler"}},
      {"evaluate", {"eval", "sampler"}},
      {"track-eval", {"track", "sampler"}},
      {"serve", {"serve"}},
  };
  return sections;
}

void apply_seed(RunConfig &rc, std::uint64_t seed)
{
  rc.seed = seed;
  rc.synth.rng_seed = seed;
  rc.cine.rng_seed = seed;
  rc.model.init_seed = seed;
  rc.train.rng_seed = seed;
  rc.sampler.rng_seed = seed;
  rc.distill.student.init_seed = seed;
  rc.distill.train.rng_seed = seed;
}

json section_json(const RunConfig &rc, const std::string &name)
{
  if (name == "synthgen") {
    return {{"kind", rc.synthgen.kind}, {"count", rc.synthgen.count}, {"split", rc.synthgen.split}};
  }
  if (name == "synth") {
    return to_json(rc.synth);
  }
  if (name == "cine") {
    return to_json(rc.cine);
  }
  if (name == "model") {
    return to_json(rc.model);
  }
  if (name == "train") {
    return to_json(rc.train);
  }
  if (name == "sampler") {
    return to_json(rc.sampler);
  }
  if (name == "loss") {
    return to_json(rc.loss);
  }
  if (name == "distill") {
    return to_json(rc.distill);
  }
  if (name == "eval") {
    return {{"budget", rc.eval.budget},
            {"cap", rc.eval.cap},
            {"start_mode", rc.eval.start_mode},
            {"split", rc.eval.split}};
  }
  if (name == "track") {
    return {{"tracker", rc.track.tracker},
            {"floor", rc.track.floor},
            {"click_budget", rc.track.click_budget}};
  }
  return {{"host", rc.serve.host},
          {"port", rc.serve.port},
          {"idle_timeout_minutes", rc.serve.idle_timeout_minutes},
          {"tracker", rc.serve.tracker},
          {"floor", rc.serve.floor},
          {"export_dir", rc.serve.export_dir},
          {"static_dir", rc.serve.static_dir}};
}

void merge_section(RunConfig &rc, const std::string &name, const json &j)
{
  if (name == "synthgen") {
    JsonFields f(j, name);
    f.read("kind", rc.synthgen.kind);
    f.read("count", rc.synthgen.count);
    f.read("split", rc.synthgen.split);
    f.finish();
  } else if (name == "synth") {
    update_from_json(rc.synth, j, name);
  } else if (name == "cine") {
    update_from_json(rc.cine, j, name);
  } else if (name == "model") {
    update_from_json(rc.model, j, name);
  } else if (name == "train") {
    update_from_json(rc.train, j, name);
  } else if (name == "sampler") {
    update_from_json(rc.sampler, j, name);
  } else if (name == "loss") {
    update_from_json(rc.loss, j, name);
  } else if (name == "distill") {
    update_from_json(rc.distill, j, name);
  } else if (name == "eval") {
    JsonFields f(j, name);
    f.read("budget", rc.eval.budget);
    f.read("cap", rc.eval.cap);
    f.read("start_mode", rc.eval.start_mode);
    f.read("split", rc.eval.split);
    f.finish();
  } else if (name == "track") {
    JsonFields f(j, name);
    f.read("tracker", rc.track.tracker);
    f.read("floor", rc.track.floor);
    f.read("click_budget", rc.track.click_budget);
    f.finish();
  } else if (name == "serve") {
    JsonFields f(j, name);
    f.read("host", rc.serve.host);
    f.read("port", rc.serve.port);
    f.read("idle_timeout_minutes", rc.serve.idle_timeout_minutes);
    f.read("tracker", rc.serve.tracker);
    f.read("floor", rc.serve.floor);
    f.read("export_dir", rc.serve.export_dir);
    f.read("static_dir", rc.serve.static_dir);
    f.finish();
  }
}

/// Defaults, then the config file, with the file's top-level seed applied before its
/// sections so that explicit per-section seeds win.
RunConfig resolve_from_file(const std::string &command, const std::optional<fs::path> &config)
{
  RunConfig rc;
  rc.command = command;
  if (!config) {
    return rc;
  }
  if (!fs::exists(*config)) {
    throw DataError("config file not found: " + config->string());
  }
  json j;
  try {
    j = json::parse(read_text(*config));
  } catch (const json::exception &e) {
    throw ConfigError("config file " + config->string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) {
    throw ConfigError("config file must hold a JSON object");
  }
  const auto &allowed = command_sections().at(command);
  JsonFields top(j, "config");
  std::uint64_t seed = 0;
  top.read("seed", seed);
  apply_seed(rc, seed);
  top.read("workers", rc.workers);
  std::string out;
  top.read("out", out);
  if (!out.empty()) {
    rc.out = out;
  }
  // A saved run_config.json is itself a valid config file.
  std::string saved_command = command;
  top.read("command", saved_command);
  if (saved_command != command) {
    throw ConfigError("config file was written by '" + saved_command + "', not '" + command + "'");
  }
  if (top.has("inputs")) {
    const json &inputs = top.child("inputs");
    if (!inputs.is_object()) {
      throw ConfigError("config.inputs must be an object");
    }
    for (const auto &item : inputs.items()) {
      if (!item.value().is_string()) {
        throw ConfigError("config.inputs." + item.key() + " must be a string");
      }
    }
    rc.inputs = inputs;
  }
  for (const auto &item : j.items()) {
    const std::string &key = item.key();
    if (key == "seed" || key == "workers" || key == "out" || key == "command" ||
        key == "inputs") {
      continue;
    }
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("configuration section '" + key + "' does not apply to " + command);
    }
    merge_section(rc, key, top.child(key.c_str()));
  }
  top.finish();
  return rc;
}

json to_json(const RunConfig &rc)
{
  json j = {{"command", rc.command},
            {"seed", rc.seed},
            {"workers", rc.workers},
            {"out", rc.out.string()},
            {"inputs", rc.inputs}};
  for (const auto &name : command_sections().at(rc.command)) {
    j[name] = section_json(rc, name);
  }
  return j;
}

std::string timestamp()
{
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path require_path(const std::string &flag, const std::string &value)
{
  if (value.empty()) {
    throw ConfigError(flag + " is required");
  }
  if (!fs::exists(value)) {
    throw DataError(flag + " path not found: " + value);
  }
  return fs::absolute(value);
}

bool is_oracle(const std::string &spec) { return spec.starts_with("oracle:"); }

std::unique_ptr<ModelAdapter> make_model_adapter(const std::string &spec)
{
  if (spec == "oracle:perfect") {
    return std::make_unique<OracleAdapter>(OracleAdapter::Kind::perfect);
  }
  if (spec == "oracle:empty") {
    return std::make_unique<OracleAdapter>(OracleAdapter::Kind::empty);
  }
  if (is_oracle(spec)) {
    throw ConfigError("unknown oracle model '" + spec + "' (expected oracle:perfect or oracle:empty)");
  }
  auto model = std::make_shared<const PromptableModel>(load_checkpoint(spec).model);
  return std::make_unique<PromptableModelAdapter>(model, fs::path(spec).filename().string());
}

void write_json(const fs::path &path, const json &j) { write_text_atomic(path, j.dump(2) + "\n"); }

void write_loss_log(const fs::path &path, const TrainReport &report)
{
  std::string text = "epoch,loss,mask_term,distill_term,val_dsc,lr\n";
  for (size_t e = 0; e < report.epoch_loss.size(); ++e) {
    char line[160];
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", e,
                  report.epoch_loss[e], report.epoch_mask_term[e], report.epoch_distill_term[e],
                  report.val_dsc[e], report.lr_trace[e]);
    text += line;
  }
  write_text_atomic(path, text);
}

/// Report without wall-clock timing so repeated runs produce identical files.
json stable_report(const TrainReport &report)
{
  json j = to_json(report);
  j.erase("seconds");
  return j;
}

std::vector<Sample> samples_from(const fs::path &manifest_path, const std::string &split = {})
{
  const DatasetManifest manifest = load_manifest(manifest_path);
  auto samples = load_samples(manifest, split);
  if (samples.empty()) {
    throw DataError("no samples in " + manifest_path.string() +
                    (split.empty() ? "" : " for split '" + split + "'"));
  }
  return samples;
}

int cmd_synthgen(RunConfig &rc, std::ostream &out)
{
  if (rc.synthgen.count < 1) {
    throw ConfigError("synthgen.count must be >= 1");
  }
  write_json(rc.out / "run_config.json", to_json(rc));
  if (rc.synthgen.kind == "images") {
    generate_dataset(rc.synth, rc.synthgen.count, rc.out, rc.synthgen.split);
    out << (rc.out / "manifest.json").string() << "\n";
  } else if (rc.synthgen.kind == "cine") {
    generate_cine_dataset(rc.cine, rc.synthgen.count, rc.out);
    out << (rc.out / "loops.json").string() << "\n";
  } else {
    throw ConfigError("synthgen.kind must be 'images' or 'cine'");
  }
  return exit_ok;
}

int cmd_train(RunConfig &rc, std::ostream &out)
{
  const fs::path data = require_path("--data", rc.inputs.value("data", ""));
  const fs::path val = require_path("--val", rc.inputs.value("val", ""));
  rc.inputs["data"] = data.string();
  rc.inputs["val"] = val.string();
  write_json(rc.out / "run_config.json", to_json(rc));

  const auto train_samples = samples_from(data);
  const auto val_samples = samples_from(val);
  PromptableModel model(rc.model);
  Trainer trainer(model, rc.train, rc.sampler, rc.loss);
  const TrainReport report = trainer.fit(train_samples, val_samples, rc.out);
  spdlog::info("training finished in {:.1f} s", report.seconds);
  save_checkpoint(model, rc.out / "model.ckpt", {{"run_config", to_json(rc)}});
  write_json(rc.out / "train_report.json", stable_report(report));
  write_loss_log(rc.out / "loss_log.csv", report);
  out << (rc.out / "model.ckpt").string() << "\n";
  return exit_ok;
}

int cmd_distill(RunConfig &rc, std::ostream &out)
{
  const fs::path teacher_path = require_path("--teacher", rc.inputs.value("teacher", ""));
  const fs::path data = require_path("--data", rc.inputs.value("data", ""));
  const fs::path val = require_path("--val", rc.inputs.value("val", ""));
  rc.inputs["teacher"] = teacher_path.string();
  rc.inputs["data"] = data.string();
  rc.inputs["val"] = val.string();
  rc.distill.teacher_checkpoint = teacher_path.string();
  write_json(rc.out / "run_config.json", to_json(rc));

  const PromptableModel teacher = load_checkpoint(teacher_path).model;
  const auto train_samples = samples_from(data);
  const auto val_samples = samples_from(val);
  PromptableModel student(rc.distill.student);
  const DistillResult result =
      distill(teacher, student, train_samples, val_samples, rc.distill, rc.sampler, rc.out);
  spdlog::info("distillation finished in {:.1f} s", result.report.seconds);
  json provenance = result.provenance;
  provenance["run_config"] = to_json(rc);
  save_checkpoint(student, rc.out / "model.ckpt", provenance);
  write_json(rc.out / "distill_report.json", stable_report(result.report));
  write_loss_log(rc.out / "loss_log.csv", result.report);
  out << (rc.out / "model.ckpt").string() << "\n";
  return exit_ok;
}

int cmd_evaluate(RunConfig &rc, std::ostream &out)
{
  const std::string spec = rc.inputs.value("model", "");
  if (spec.empty()) {
    throw ConfigError("--model is required");
  }
  if (!is_oracle(spec)) {
    rc.inputs["model"] = require_path("--model", spec).string();
  }
  const fs::path data = require_path("--data", rc.inputs.value("data", ""));
  rc.inputs["data"] = data.string();
  EvalOptions options;
  options.budget = rc.eval.budget;
  options.cap = rc.eval.cap;
  options.start = start_mode_from_string(rc.eval.start_mode);
  options.seed = rc.seed;
  options.workers = rc.workers;
  if (options.budget < 1 || options.cap < options.budget) {
    throw ConfigError("evaluation needs budget >= 1 and cap >= budget");
  }
  write_json(rc.out / "run_config.json", to_json(rc));

  const DatasetManifest manifest = load_manifest(data);
  const auto samples = load_samples(manifest, rc.eval.split);
  if (samples.empty()) {
    throw DataError("no samples to evaluate in " + data.string());
  }
  options.dataset_id = manifest.dataset_id;
  const auto adapter = make_model_adapter(rc.inputs["model"].get<std::string>());
  const EvalResult result = evaluate_dataset(*adapter, samples, options, rc.sampler);
  write_eval_outputs(result, rc.out);
  const auto &r = result.report;
  out << "noc80 " << r.noc80 << " noc90 " << r.noc90 << " fr80 " << r.fr80 << " fr90 " << r.fr90
      << " max_dsc " << r.max_dsc << "\n";
  return exit_ok;
}

int cmd_track_eval(RunConfig &rc, std::ostream &out)
{
  const std::string spec = rc.inputs.value("model", "");
  if (spec.empty()) {
    throw ConfigError("--model is required");
  }
  if (!is_oracle(spec)) {
    rc.inputs["model"] = require_path("--model", spec).string();
  }
  const fs::path loops_path = require_path("--loops", rc.inputs.value("loops", ""));
  rc.inputs["loops"] = loops_path.string();
  TrackConfig tc;
  tc.dsc_floor = rc.track.floor;
  tc.click_budget = rc.track.click_budget;
  tc.seed = rc.seed;
  tc.validate();
  make_tracker(rc.track.tracker);
  write_json(rc.out / "run_config.json", to_json(rc));

  const auto loops = load_loops(loops_path);
  const auto adapter = make_model_adapter(rc.inputs["model"].get<std::string>());
  std::vector<TrackingReport> reports;
  for (const auto &loop : loops) {
    auto tracker = make_tracker(rc.track.tracker);
    auto model = adapter->clone();
    reports.push_back(run_loop(*model, *tracker, loop, tc, rc.sampler));
  }
  const auto summary = aggregate_tracking(reports);
  json loops_json = json::array();
  for (const auto &r : reports) {
    loops_json.push_back(to_json(r));
  }
  write_json(rc.out / "tracking_report.json",
             {{"tracker", rc.track.tracker},
              {"dsc_floor", rc.track.floor},
              {"loops", loops_json},
              {"summary", to_json(std::span<const TrackingSummary>(summary))}});
  for (const auto &s : summary) {
    out << s.view << " " << s.object_id << " interventions/loop " << s.interventions_per_loop
        << " mean_drop " << s.mean_drop << " clicks/frame " << s.clicks_per_frame << "\n";
  }
  return exit_ok;
}

int cmd_serve(RunConfig &rc, std::ostream &out)
{
  const std::string spec = rc.inputs.value("model", "");
  if (spec.empty()) {
    throw ConfigError("--model is required");
  }
  if (!is_oracle(spec)) {
    rc.inputs["model"] = require_path("--model", spec).string();
  }
  std::optional<DatasetManifest> manifest;
  if (const std::string data = rc.inputs.value("data", ""); !data.empty()) {
    rc.inputs["data"] = require_path("--data", data).string();
  }
  std::vector<CineLoop> loops;
  if (const std::string l = rc.inputs.value("loops", ""); !l.empty()) {
    rc.inputs["loops"] = require_path("--loops", l).string();
  }
  if (rc.serve.export_dir.empty()) {
    rc.serve.export_dir = (rc.out / "exports").string();
  }
  if (!rc.serve.static_dir.empty() && !fs::is_directory(rc.serve.static_dir)) {
    throw DataError("static directory not found: " + rc.serve.static_dir);
  }
  if (rc.serve.port < 0 || rc.serve.port > 65535 || rc.serve.idle_timeout_minutes < 1) {
    throw ConfigError("serve.port must be in [0, 65535] and serve.idle_timeout_minutes >= 1");
  }
  write_json(rc.out / "run_config.json", to_json(rc));

  if (rc.inputs.contains("data")) {
    manifest = load_manifest(rc.inputs["data"].get<std::string>());
  }
  if (rc.inputs.contains("loops")) {
    loops = load_loops(rc.inputs["loops"].get<std::string>());
  }
  ServiceConfig sc;
  sc.idle_timeout = std::chrono::minutes(rc.serve.idle_timeout_minutes);
  sc.dsc_floor = rc.serve.floor;
  sc.tracker = rc.serve.tracker;
  sc.export_dir = rc.serve.export_dir;
  sc.static_dir = rc.serve.static_dir;
  AnnotationService service(make_model_adapter(rc.inputs["model"].get<std::string>()), sc,
                            std::move(manifest), std::move(loops));

  // SIGINT/SIGTERM are taken by a watcher thread so the server shuts down cleanly.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  std::atomic<bool> finished = false;
  std::thread watcher([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    if (!finished) {
      spdlog::info("signal {} received, shutting down", sig);
    }
    service.stop();
  });
  int status = exit_ok;
  try {
    const int port = service.bind_port(rc.serve.host, rc.serve.port);
    out << "listening on " << rc.serve.host << ":" << port << std::endl;
    service.listen_after_bind();
  } catch (const std::exception &e) {
    spdlog::error("{}", e.what());
    status = exit_runtime;
  }
  finished = true;
  pthread_kill(watcher.native_handle(), SIGTERM);
  watcher.join();
  pthread_sigmask(SIG_UNBLOCK, &signals, nullptr);
  return status;
}

} // namespace

int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err)
{
  CLI::App app{"Promptable segmentation toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out_dir;
  std::string log_level = "info";
  // Flag values land here and override the config file after it is merged.
  std::vector<std::function<void(RunConfig &)>> overrides;

  auto common = [&](CLI::App *sub) {
    sub->add_option("--config", config, "JSON configuration file");
    sub->add_option("--seed", seed, "Run seed; overrides every component seed");
    sub->add_option("--workers", workers, "Parallel workers for evaluation fan-out (default 1)");
    sub->add_option("--out", out_dir,
                    "Output directory (default runs/<timestamp>-seed<seed>)");
    sub->add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  };
  auto input = [&](CLI::App *sub, const std::string &flag, const std::string &key,
                   const std::string &help) {
    auto value = std::make_shared<std::string>();
    sub->add_option(flag, *value, help)->each([value, key, &overrides](const std::string &) {
      overrides.push_back([value, key](RunConfig &rc) { rc.inputs[key] = *value; });
    });
  };
  auto option = [&](CLI::App *sub, const std::string &flag, auto setter, const std::string &help,
                    auto sample) {
    using T = decltype(sample);
    auto value = std::make_shared<T>();
    auto *opt = sub->add_option(flag, *value, help);
    opt->each([value, setter, &overrides](const std::string &) {
      overrides.push_back([value, setter](RunConfig &rc) { setter(rc, *value); });
    });
    return opt;
  };

  auto *synthgen = app.add_subcommand("synthgen", "Generate a synthetic image or cine dataset");
  common(synthgen);
  option(synthgen, "--count", [](RunConfig &rc, int v) { rc.synthgen.count = v; },
         "Number of images or loops", 0);
  option(synthgen, "--kind", [](RunConfig &rc, std::string v) { rc.synthgen.kind = v; },
         "images|cine", std::string())
      ->check(CLI::IsMember({"images", "cine"}));
  option(synthgen, "--split", [](RunConfig &rc, std::string v) { rc.synthgen.split = v; },
         "Split name stored in the manifest", std::string());

  auto *train = app.add_subcommand("train", "Fine-tune the prompt encoder and mask decoder");
  common(train);
  input(train, "--data", "data", "Training manifest");
  input(train, "--val", "val", "Validation manifest");
  option(train, "--epochs", [](RunConfig &rc, int v) { rc.train.epochs = v; }, "Epochs", 0);
  option(train, "--batch-size", [](RunConfig &rc, int v) { rc.train.batch_size = v; },
         "Samples per optimizer step", 0);
  option(train, "--lr", [](RunConfig &rc, double v) { rc.train.learning_rate = v; },
         "Initial learning rate", 0.0);

  auto *dist = app.add_subcommand("distill", "Distill a student from a teacher checkpoint");
  common(dist);
  input(dist, "--teacher", "teacher", "Teacher checkpoint file");
  input(dist, "--data", "data", "Training manifest");
  input(dist, "--val", "val", "Validation manifest");
  option(dist, "--epochs", [](RunConfig &rc, int v) { rc.distill.train.epochs = v; }, "Epochs",
         0);
  option(dist, "--alpha", [](RunConfig &rc, double v) { rc.distill.loss.alpha = v; },
         "Weight of the distillation term", 0.0);

  auto *evaluate = app.add_subcommand("evaluate", "Run the click-protocol evaluation");
  common(evaluate);
  input(evaluate, "--model", "model", "Checkpoint file, oracle:perfect or oracle:empty");
  input(evaluate, "--data", "data", "Dataset manifest");
  option(evaluate, "--budget", [](RunConfig &rc, int v) { rc.eval.budget = v; },
         "Clicks per image (default 10)", 0);
  option(evaluate, "--cap", [](RunConfig &rc, int v) { rc.eval.cap = v; },
         "NoC value for images that never reach the threshold (default 20)", 0);
  option(evaluate, "--start-mode", [](RunConfig &rc, std::string v) { rc.eval.start_mode = v; },
         "point|box", std::string())
      ->check(CLI::IsMember({"point", "box"}));
  option(evaluate, "--split", [](RunConfig &rc, std::string v) { rc.eval.split = v; },
         "Only evaluate records of this split", std::string());

  auto *track = app.add_subcommand("track-eval", "Track-and-correct evaluation on cine loops");
  common(track);
  input(track, "--model", "model", "Checkpoint file, oracle:perfect or oracle:empty");
  input(track, "--loops", "loops", "loops.json index or a directory of loops");
  option(track, "--tracker", [](RunConfig &rc, std::string v) { rc.track.tracker = v; },
         "previous|shift", std::string())
      ->check(CLI::IsMember({"previous", "shift"}));
  option(track, "--floor", [](RunConfig &rc, double v) { rc.track.floor = v; },
         "DSC below which a frame is corrected (default 0.90)", 0.0);
  option(track, "--click-budget", [](RunConfig &rc, int v) { rc.track.click_budget = v; },
         "Clicks per corrective session (default 10)", 0);

  auto *serve = app.add_subcommand("serve", "Run the annotation HTTP service");
  common(serve);
  input(serve, "--model", "model", "Checkpoint file, oracle:perfect or oracle:empty");
  input(serve, "--data", "data", "Manifest whose records sessions may reference");
  input(serve, "--loops", "loops", "Cine loops sessions may reference");
  option(serve, "--host", [](RunConfig &rc, std::string v) { rc.serve.host = v; },
         "Bind address (default 127.0.0.1)", std::string());
  option(serve, "--port", [](RunConfig &rc, int v) { rc.serve.port = v; },
         "Port (default 8080, 0 picks a free port)", 0);
  option(serve, "--static", [](RunConfig &rc, std::string v) { rc.serve.static_dir = v; },
         "Directory served at /", std::string());
  option(serve, "--export-dir", [](RunConfig &rc, std::string v) { rc.serve.export_dir = v; },
         "Export root (default <out>/exports)", std::string());
  option(serve, "--idle-timeout",
         [](RunConfig &rc, int v) { rc.serve.idle_timeout_minutes = v; },
         "Session idle timeout in minutes (default 30)", 0);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp &e) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForAllHelp &e) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  }

  spdlog::set_level(spdlog::level::from_str(log_level));
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    RunConfig rc = resolve_from_file(command, config);
    if (seed) {
      apply_seed(rc, *seed);
    }
    if (workers) {
      rc.workers = *workers;
    }
    if (rc.workers < 1) {
      throw ConfigError("--workers must be >= 1");
    }
    for (const auto &apply : overrides) {
      apply(rc);
    }
    if (out_dir) {
      rc.out = *out_dir;
    }
    if (rc.out.empty()) {
      rc.out = fs::path("runs") / (timestamp() + "-seed" + std::to_string(rc.seed));
    }
    rc.out = fs::absolute(rc.out);
    rc.synth.validate();
    rc.cine.validate();
    rc.model.validate();
    rc.train.validate();
    rc.sampler.validate();
    rc.loss.validate();
    rc.distill.validate();
    fs::create_directories(rc.out);

    if (command == "synthgen") {
      return cmd_synthgen(rc, out);
    }
    if (command == "train") {
      return cmd_train(rc, out);
    }
    if (command == "distill") {
      return cmd_distill(rc, out);
    }
    if (command == "evaluate") {
      return cmd_evaluate(rc, out);
    }
    if (command == "track-eval") {
      return cmd_track_eval(rc, out);
    }
    return cmd_serve(rc, out);
  } catch (const DataError &e) {
    err << "error: " << e.what() << "\n";
    return exit_data;
  } catch (const InvalidArgument &e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return exit_runtime;
  }
}

} // namespace promptseg
