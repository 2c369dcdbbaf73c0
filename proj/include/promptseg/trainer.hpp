#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptseg/dataset.hpp"
#include "promptseg/model.hpp"
#include "promptseg/objectives.hpp"
#include "promptseg/prompting.hpp"

namespace promptseg {

struct TrainConfig {
  double learning_rate = 1e-4;
  double decay_factor = 0.5;
  int decay_every_epochs = 25;
  int epochs = 20;
  int batch_size = 2;
  int max_prompt_rounds_per_sample = 3;
  bool freeze_encoder = true;
  std::uint64_t rng_seed = 0;
  /// Click budget of the validation sessions.
  int val_budget = 3;

  void validate() const;
  friend bool operator==(const TrainConfig &, const TrainConfig &) = default;
};

nlohmann::json to_json(const TrainConfig &c);
void update_from_json(TrainConfig &c, const nlohmann::json &j, const std::string &section);

/// learning_rate * decay_factor ^ floor(epoch / decay_every_epochs)
double lr_at_epoch(int epoch, const TrainConfig &config);

/// Adam over a fixed list of parameters; reads each parameter's accumulated gradient.
class Adam {
public:
  explicit Adam(std::vector<ag::Var> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(double lr);
  long steps() const { return t_; }

private:
  std::vector<ag::Var> params_;
  std::vector<ag::Matrix> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Trainable parameters of the model, excluding the encoder when it is frozen.
std::vector<ag::Var> optimized_parameters(PromptableModel &model);

struct StepStats {
  double loss = 0.0;
  /// Loss components; mask_term equals loss when no teacher is attached.
  double mask_term = 0.0;
  double distill_term = 0.0;
  int samples = 0;
  int skipped = 0;
  int predictions = 0;
};

/// Mean DSC after `budget` eval-mode clicks (early stops carry the last value).
double validation_dsc(const PromptableModel &model, std::span<const Sample> samples, int budget,
                      const SamplerConfig &sampler);

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> val_dsc;
  std::vector<double> lr_trace;
  std::vector<double> epoch_mask_term;
  std::vector<double> epoch_distill_term;
  std::uint64_t encoder_checksum_before = 0;
  std::uint64_t encoder_checksum_after = 0;
  int best_epoch = -1;
  double best_val_dsc = 0.0;
  int skipped_samples = 0;
  double seconds = 0.0;
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json to_json(const TrainReport &r);

/// Optional per-epoch callback: (epoch, mean loss, val dsc).
using EpochHook = std::function<void(int, double, double)>;

/// Stage-1 fine-tuning with iterative prompt rounds and the DiceFocal objective.
class Trainer {
public:
  Trainer(PromptableModel &model, TrainConfig config, SamplerConfig sampler, LossConfig loss);

  /// One optimizer update over the batch. Samples with an empty gt are skipped.
  StepStats step(std::span<const Sample *const> batch, double lr);
  /// Same loss without touching the weights.
  StepStats evaluate_loss(std::span<const Sample *const> batch);

  /// Writes <out_dir>/checkpoints/latest.ckpt every epoch and best.ckpt on improvement
  /// when out_dir is set. The model ends up holding the best-validation weights.
  TrainReport fit(std::span<const Sample> train, std::span<const Sample> val,
                  const std::optional<std::filesystem::path> &out_dir = std::nullopt,
                  const EpochHook &hook = {});

  /// With a teacher attached, every round uses the student objective against the
  /// teacher's best-round logits. The teacher is only read.
  void set_teacher(const PromptableModel *teacher) { teacher_ = teacher; }

  std::mt19937_64 &rng() { return rng_; }

private:
  StepStats run(std::span<const Sample *const> batch, bool update, double lr);
  ImageEmbedding embed(const Sample &sample);
  ag::Matrix teacher_target(const Sample &sample, const PromptSet &first);

  PromptableModel &model_;
  TrainConfig config_;
  SamplerConfig sampler_;
  LossConfig loss_;
  Adam optimizer_;
  std::mt19937_64 rng_;
  /// Clicks of the teacher rounds come from a separate stream, so attaching a teacher
  /// does not change the student's prompt sequence.
  std::mt19937_64 teacher_rng_;
  std::map<std::string, ImageEmbedding> cache_;
  std::map<std::string, ImageEmbedding> teacher_cache_;
  const PromptableModel *teacher_ = nullptr;
};

} // namespace promptseg
