#include "promptseg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <thread>

#include <spdlog/spdlog.h>

#include "promptseg/image_io.hpp"

namespace promptseg {

using nlohmann::json;

namespace {

void require_traces(std::span<const InteractionTrace> traces, const char *what)
{
  if (traces.empty()) {
    throw InvalidArgument(std::string(what) + ": empty trace set");
  }
  for (const auto &t : traces) {
    if (t.dsc_per_click.empty()) {
      throw InvalidArgument(std::string(what) + ": trace '" + t.image_id + "' has no clicks");
    }
  }
}

// 1-based index of the first click reaching the threshold within `limit`, or 0.
int first_success(const InteractionTrace &t, double threshold, int limit)
{
  const int n = std::min(limit, static_cast<int>(t.dsc_per_click.size()));
  for (int i = 0; i < n; ++i) {
    if (t.dsc_per_click[static_cast<size_t>(i)] >= threshold) {
      return i + 1;
    }
  }
  return 0;
}

} // namespace

double noc_at(double threshold, std::span<const InteractionTrace> traces, int cap)
{
  require_traces(traces, "noc_at");
  if (cap < 1) {
    throw InvalidArgument("noc_at: cap must be >= 1");
  }
  double sum = 0.0;
  for (const auto &t : traces) {
    const int k = first_success(t, threshold, cap);
    sum += k > 0 ? k : cap;
  }
  return sum / static_cast<double>(traces.size());
}

double failure_rate(double threshold, std::span<const InteractionTrace> traces, int budget)
{
  require_traces(traces, "failure_rate");
  if (budget < 1) {
    throw InvalidArgument("failure_rate: budget must be >= 1");
  }
  size_t failed = 0;
  for (const auto &t : traces) {
    failed += first_success(t, threshold, budget) == 0;
  }
  return static_cast<double>(failed) / static_cast<double>(traces.size());
}

std::vector<double> mean_dsc_curve(std::span<const InteractionTrace> traces, int budget)
{
  require_traces(traces, "mean_dsc_curve");
  if (budget < 1) {
    throw InvalidArgument("mean_dsc_curve: budget must be >= 1");
  }
  std::vector<double> curve(static_cast<size_t>(budget), 0.0);
  for (int k = 0; k < budget; ++k) {
    double sum = 0.0;
    for (const auto &t : traces) {
      const size_t i = std::min(static_cast<size_t>(k), t.dsc_per_click.size() - 1);
      sum += t.dsc_per_click[i];
    }
    curve[static_cast<size_t>(k)] = sum / static_cast<double>(traces.size());
  }
  return curve;
}

double max_dsc(std::span<const InteractionTrace> traces, int budget)
{
  const auto curve = mean_dsc_curve(traces, budget);
  return *std::max_element(curve.begin(), curve.end());
}

MetricsReport compute_metrics(std::span<const InteractionTrace> traces, int budget, int cap)
{
  if (cap < budget) {
    throw InvalidArgument("NoC cap must be >= the click budget");
  }
  MetricsReport r;
  r.budget = budget;
  r.cap = cap;
  r.mean_dsc_curve = mean_dsc_curve(traces, budget);
  r.max_dsc = *std::max_element(r.mean_dsc_curve.begin(), r.mean_dsc_curve.end());
  r.noc80 = noc_at(0.8, traces, cap);
  r.noc90 = noc_at(0.9, traces, cap);
  r.fr80 = failure_rate(0.8, traces, budget);
  r.fr90 = failure_rate(0.9, traces, budget);
  r.trace_count = static_cast<int>(traces.size());
  return r;
}

json to_json(const MetricsReport &r)
{
  return {{"dataset_id", r.dataset_id},
          {"model_id", r.model_id},
          {"start_mode", r.start_mode},
          {"budget", r.budget},
          {"cap", r.cap},
          {"mean_dsc_curve", r.mean_dsc_curve},
          {"noc80", r.noc80},
          {"noc90", r.noc90},
          {"fr80", r.fr80},
          {"fr90", r.fr90},
          {"max_dsc", r.max_dsc},
          {"trace_count", r.trace_count},
          {"failed_images", r.failed_images},
          {"failed_ids", r.failed_ids}};
}

json to_json(const InteractionTrace &t)
{
  json clicks = json::array();
  for (const auto &c : t.clicks) {
    json cj;
    if (c.point) {
      cj["x"] = c.point->x;
      cj["y"] = c.point->y;
      cj["label"] = to_string(c.point->label);
    }
    if (c.box) {
      cj["box"] = {c.box->x0, c.box->y0, c.box->x1, c.box->y1};
    }
    cj["dsc"] = c.dsc;
    clicks.push_back(cj);
  }
  return {{"image_id", t.image_id}, {"dsc_per_click", t.dsc_per_click}, {"clicks", clicks}};
}

InteractionTrace trace_from_json(const json &j)
{
  try {
    InteractionTrace t;
    t.image_id = j.at("image_id").get<std::string>();
    t.dsc_per_click = j.at("dsc_per_click").get<std::vector<double>>();
    for (const auto &cj : j.value("clicks", json::array())) {
      ClickRecord c;
      if (cj.contains("x")) {
        c.point = Point{cj.at("x").get<int>(), cj.at("y").get<int>(),
                        label_from_string(cj.at("label").get<std::string>())};
      }
      if (cj.contains("box")) {
        const auto b = cj.at("box").get<std::vector<int>>();
        if (b.size() != 4) {
          throw DataError("trace box must have four values");
        }
        c.box = Box{b[0], b[1], b[2], b[3]};
      }
      c.dsc = cj.at("dsc").get<double>();
      t.clicks.push_back(c);
    }
    return t;
  } catch (const json::exception &e) {
    throw DataError(std::string("malformed trace record: ") + e.what());
  } catch (const InvalidArgument &e) {
    throw DataError(std::string("malformed trace record: ") + e.what());
  }
}

json traces_to_json(std::span<const InteractionTrace> traces)
{
  json arr = json::array();
  for (const auto &t : traces) {
    arr.push_back(to_json(t));
  }
  return arr;
}

std::vector<InteractionTrace> traces_from_json(const json &j)
{
  if (!j.is_array()) {
    throw DataError("trace file must hold an array");
  }
  std::vector<InteractionTrace> out;
  for (const auto &tj : j) {
    out.push_back(trace_from_json(tj));
  }
  return out;
}

PromptableModelAdapter::PromptableModelAdapter(std::shared_ptr<const PromptableModel> model,
                                               std::string name)
    : model_(std::move(model)), name_(std::move(name))
{
}

void PromptableModelAdapter::set_image(const ImageGrid &image, const std::string &,
                                       const BinaryMask &)
{
  ag::NoGradGuard no_grad;
  height_ = image.height();
  width_ = image.width();
  const ImageGrid padded = pad_to_multiple(image, model_->config().patch_size);
  embedding_ = model_->encode_image(padded);
}

BinaryMask PromptableModelAdapter::predict(const PromptSet &prompts)
{
  if (!embedding_.tokens.defined()) {
    throw InvalidArgument("predict called before set_image");
  }
  BinaryMask mask = model_->predict(embedding_, prompts).mask;
  if (mask.height() == height_ && mask.width() == width_) {
    return mask;
  }
  BinaryMask cropped(height_, width_);
  for (int r = 0; r < height_; ++r) {
    for (int c = 0; c < width_; ++c) {
      cropped(r, c) = mask(r, c);
    }
  }
  return cropped;
}

std::unique_ptr<ModelAdapter> PromptableModelAdapter::clone() const
{
  return std::make_unique<PromptableModelAdapter>(model_, name_);
}

BinaryMask OracleAdapter::predict(const PromptSet &)
{
  if (kind_ == Kind::perfect) {
    return gt_;
  }
  return BinaryMask(gt_.height(), gt_.width());
}

RgbImage replicate_channels(const ImageGrid &image) { return {image, image, image}; }

EvalResult evaluate_dataset(const ModelAdapter &adapter, std::span<const Sample> samples,
                            const EvalOptions &options, const SamplerConfig &sampler)
{
  if (samples.empty()) {
    throw InvalidArgument("evaluation set is empty");
  }
  if (options.budget < 1 || options.cap < options.budget) {
    throw InvalidArgument("evaluation needs budget >= 1 and cap >= budget");
  }
  const int workers = std::max(1, std::min(options.workers, static_cast<int>(samples.size())));
  std::vector<std::optional<InteractionTrace>> slots(samples.size());
  std::vector<std::string> errors(samples.size());

  auto run_range = [&](ModelAdapter &a, size_t begin, size_t step) {
    for (size_t i = begin; i < samples.size(); i += step) {
      const Sample &s = samples[i];
      try {
        a.set_image(s.image, s.id, s.gt);
        auto rng = derive_rng(options.seed, s.id);
        SessionOptions so;
        so.budget = options.budget;
        so.mode = SamplingMode::eval;
        so.start = options.start;
        const PredictFn predict = [&](const PromptSet &p) { return a.predict(p); };
        slots[i] = simulate_session(predict, s.gt, so, sampler, rng, s.id).trace;
      } catch (const std::exception &e) {
        errors[i] = e.what();
      }
    }
  };

  if (workers == 1) {
    auto a = adapter.clone();
    run_range(*a, 0, 1);
  } else {
    std::vector<std::unique_ptr<ModelAdapter>> copies;
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) {
      copies.push_back(adapter.clone());
    }
    for (int w = 0; w < workers; ++w) {
      threads.emplace_back(run_range, std::ref(*copies[static_cast<size_t>(w)]),
                           static_cast<size_t>(w), static_cast<size_t>(workers));
    }
    for (auto &t : threads) {
      t.join();
    }
  }

  EvalResult result;
  std::vector<std::string> failed;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (slots[i]) {
      result.traces.push_back(std::move(*slots[i]));
    } else {
      spdlog::warn("evaluation failed on {}: {}", samples[i].id, errors[i]);
      failed.push_back(samples[i].id);
    }
  }
  if (result.traces.empty()) {
    throw DataError("evaluation failed on every image (first error: " + errors.front() + ")");
  }
  result.report = compute_metrics(result.traces, options.budget, options.cap);
  result.report.dataset_id = options.dataset_id;
  result.report.model_id = adapter.name();
  result.report.start_mode = to_string(options.start);
  result.report.failed_images = static_cast<int>(failed.size());
  result.report.failed_ids = std::move(failed);
  return result;
}

std::string emit_curves(std::span<const MetricsReport> reports)
{
  if (reports.empty()) {
    throw InvalidArgument("emit_curves needs at least one report");
  }
  std::string out = "model,dataset,clicks,mean_dsc\n";
  char buf[64];
  for (const auto &r : reports) {
    for (size_t k = 0; k < r.mean_dsc_curve.size(); ++k) {
      std::snprintf(buf, sizeof(buf), ",%zu,%.17g\n", k + 1, r.mean_dsc_curve[k]);
      out += r.model_id + "," + r.dataset_id + buf;
    }
  }
  return out;
}

void write_eval_outputs(const EvalResult &result, const std::filesystem::path &dir)
{
  write_text_atomic(dir / "report.json", to_json(result.report).dump(2) + "\n");
  write_text_atomic(dir / "traces.json", traces_to_json(result.traces).dump(2) + "\n");
  const MetricsReport reports[] = {result.report};
  write_text_atomic(dir / "curves.csv", emit_curves(reports));
}

} // namespace promptseg
