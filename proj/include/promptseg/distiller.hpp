#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptseg/model.hpp"
#include "promptseg/trainer.hpp"

namespace promptseg {

struct TeacherRound {
  ag::Matrix logits;
  double dsc = 0.0;
};

/// Logits of the round with the highest DSC; the first such round wins ties.
/// Throws InvalidArgument on an empty list.
ag::Matrix select_best_teacher_output(std::span<const TeacherRound> rounds);
/// Index form of the same rule.
size_t best_round_index(std::span<const double> dscs);

struct DistillConfig {
  ModelConfig student = ModelConfig::student_default();
  /// Optimizer schedule, rounds and epochs; freeze_encoder is forced off for the student.
  TrainConfig train;
  /// The alpha field weights the distillation term.
  LossConfig loss;
  std::string teacher_checkpoint;
  /// Start the student's prompt encoder and decoder from the teacher's weights.
  bool init_from_teacher = false;

  void validate() const;
};

nlohmann::json to_json(const DistillConfig &c);
void update_from_json(DistillConfig &c, const nlohmann::json &j, const std::string &section);

struct DistillResult {
  TrainReport report;
  double size_ratio = 0.0;
  bool size_warning = false;
  std::uint64_t teacher_checksum_before = 0;
  std::uint64_t teacher_checksum_after = 0;
  /// Provenance stored in the student checkpoint.
  nlohmann::json provenance;
};

/// Trains `student` against the read-only `teacher`. Writes checkpoints under out_dir
/// when set; the student ends with its best-validation weights.
DistillResult distill(const PromptableModel &teacher, PromptableModel &student,
                      std::span<const Sample> train, std::span<const Sample> val,
                      const DistillConfig &config, const SamplerConfig &sampler,
                      const std::optional<std::filesystem::path> &out_dir = std::nullopt);

} // namespace promptseg
