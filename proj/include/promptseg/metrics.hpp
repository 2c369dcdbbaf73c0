#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptseg/dataset.hpp"
#include "promptseg/model.hpp"
#include "promptseg/prompting.hpp"

namespace promptseg {

/// Mean over traces of the first 1-based click index with DSC >= threshold, else cap.
double noc_at(double threshold, std::span<const InteractionTrace> traces, int cap);
/// Fraction of traces that never reach threshold within the first `budget` clicks.
double failure_rate(double threshold, std::span<const InteractionTrace> traces, int budget);
/// Mean DSC at clicks 1..budget; a trace that ended early carries its last DSC forward.
std::vector<double> mean_dsc_curve(std::span<const InteractionTrace> traces, int budget);
double max_dsc(std::span<const InteractionTrace> traces, int budget);

struct MetricsReport {
  std::string dataset_id;
  std::string model_id;
  std::string start_mode = "point";
  int budget = 10;
  int cap = 20;
  std::vector<double> mean_dsc_curve;
  double noc80 = 0.0;
  double noc90 = 0.0;
  double fr80 = 0.0;
  double fr90 = 0.0;
  double max_dsc = 0.0;
  int trace_count = 0;
  int failed_images = 0;
  std::vector<std::string> failed_ids;
  friend bool operator==(const MetricsReport &, const MetricsReport &) = default;
};

MetricsReport compute_metrics(std::span<const InteractionTrace> traces, int budget, int cap);

nlohmann::json to_json(const MetricsReport &r);
nlohmann::json to_json(const InteractionTrace &t);
InteractionTrace trace_from_json(const nlohmann::json &j);
nlohmann::json traces_to_json(std::span<const InteractionTrace> traces);
std::vector<InteractionTrace> traces_from_json(const nlohmann::json &j);

/// Uniform protocol through which the harness drives any model.
class ModelAdapter {
public:
  virtual ~ModelAdapter() = default;
  virtual std::string name() const = 0;
  /// Called once per image before any predict. `gt` is only for scripted adapters.
  virtual void set_image(const ImageGrid &image, const std::string &image_id,
                         const BinaryMask &gt) = 0;
  virtual BinaryMask predict(const PromptSet &prompts) = 0;
  /// Independent copy for a worker thread.
  virtual std::unique_ptr<ModelAdapter> clone() const = 0;
};

/// Wraps a PromptableModel; the image embedding is computed once per image.
class PromptableModelAdapter : public ModelAdapter {
public:
  PromptableModelAdapter(std::shared_ptr<const PromptableModel> model, std::string name);
  std::string name() const override { return name_; }
  void set_image(const ImageGrid &image, const std::string &image_id,
                 const BinaryMask &gt) override;
  BinaryMask predict(const PromptSet &prompts) override;
  std::unique_ptr<ModelAdapter> clone() const override;
  const ImageEmbedding &embedding() const { return embedding_; }

private:
  std::shared_ptr<const PromptableModel> model_;
  std::string name_;
  ImageEmbedding embedding_;
  int height_ = 0;
  int width_ = 0;
};

/// Scripted reference adapters: "perfect" returns the ground truth, "empty" nothing.
class OracleAdapter : public ModelAdapter {
public:
  enum class Kind { perfect, empty };
  explicit OracleAdapter(Kind kind) : kind_(kind) {}
  std::string name() const override
  {
    return kind_ == Kind::perfect ? "oracle:perfect" : "oracle:empty";
  }
  void set_image(const ImageGrid &, const std::string &, const BinaryMask &gt) override
  {
    gt_ = gt;
  }
  BinaryMask predict(const PromptSet &prompts) override;
  std::unique_ptr<ModelAdapter> clone() const override
  {
    return std::make_unique<OracleAdapter>(*this);
  }

private:
  Kind kind_;
  BinaryMask gt_;
};

using RgbImage = std::array<ImageGrid, 3>;
/// Channel replication for external models that expect three channels.
RgbImage replicate_channels(const ImageGrid &image);

/// Adapter for an external model taking a 3-channel image.
class RgbFunctionAdapter : public ModelAdapter {
public:
  using Fn = std::function<BinaryMask(const RgbImage &, const PromptSet &)>;
  RgbFunctionAdapter(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}
  std::string name() const override { return name_; }
  void set_image(const ImageGrid &image, const std::string &, const BinaryMask &) override
  {
    rgb_ = replicate_channels(image);
  }
  BinaryMask predict(const PromptSet &prompts) override { return fn_(rgb_, prompts); }
  std::unique_ptr<ModelAdapter> clone() const override
  {
    return std::make_unique<RgbFunctionAdapter>(*this);
  }

private:
  std::string name_;
  Fn fn_;
  RgbImage rgb_;
};

struct EvalOptions {
  int budget = 10;
  int cap = 20;
  StartMode start = StartMode::point;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string dataset_id;
};

struct EvalResult {
  MetricsReport report;
  std::vector<InteractionTrace> traces;
};

/// Runs one eval-mode session per sample. Adapter failures mark the image failed and
/// exclude it from the metrics.
EvalResult evaluate_dataset(const ModelAdapter &adapter, std::span<const Sample> samples,
                            const EvalOptions &options, const SamplerConfig &sampler = {});

/// Writes report.json, traces.json and curves.csv into `dir`.
void write_eval_outputs(const EvalResult &result, const std::filesystem::path &dir);

/// Header "model,dataset,clicks,mean_dsc" then one row per click per series.
std::string emit_curves(std::span<const MetricsReport> reports);

} // namespace promptseg
