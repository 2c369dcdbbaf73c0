#include "promptseg/distiller.hpp"

#include <spdlog/spdlog.h>

#include "promptseg/checkpoint.hpp"
#include "promptseg/config_io.hpp"

namespace promptseg {

using nlohmann::json;

size_t best_round_index(std::span<const double> dscs)
{
  if (dscs.empty()) {
    throw InvalidArgument("best-mask selection needs at least one round");
  }
  size_t best = 0;
  for (size_t i = 1; i < dscs.size(); ++i) {
    if (dscs[i] > dscs[best]) {
      best = i;
    }
  }
  return best;
}

ag::Matrix select_best_teacher_output(std::span<const TeacherRound> rounds)
{
  std::vector<double> dscs;
  for (const auto &r : rounds) {
    dscs.push_back(r.dsc);
  }
  return rounds[best_round_index(dscs)].logits;
}

void DistillConfig::validate() const
{
  student.validate();
  train.validate();
  loss.validate();
}

json to_json(const DistillConfig &c)
{
  return {{"student", to_json(c.student)},
          {"train", to_json(c.train)},
          {"loss", to_json(c.loss)},
          {"teacher_checkpoint", c.teacher_checkpoint},
          {"init_from_teacher", c.init_from_teacher}};
}

void update_from_json(DistillConfig &c, const json &j, const std::string &section)
{
  JsonFields f(j, section);
  if (f.has("student")) {
    update_from_json(c.student, f.child("student"), section + ".student");
  }
  if (f.has("train")) {
    update_from_json(c.train, f.child("train"), section + ".train");
  }
  if (f.has("loss")) {
    update_from_json(c.loss, f.child("loss"), section + ".loss");
  }
  f.read("teacher_checkpoint", c.teacher_checkpoint);
  f.read("init_from_teacher", c.init_from_teacher);
  f.finish();
  c.validate();
}

DistillResult distill(const PromptableModel &teacher, PromptableModel &student,
                      std::span<const Sample> train, std::span<const Sample> val,
                      const DistillConfig &config, const SamplerConfig &sampler,
                      const std::optional<std::filesystem::path> &out_dir)
{
  config.validate();
  DistillResult result;
  const double teacher_total = static_cast<double>(teacher.parameter_partition().total());
  const double student_total = static_cast<double>(student.parameter_partition().total());
  result.size_ratio = student_total / teacher_total;
  result.size_warning = result.size_ratio > 1.0 / 3.0;
  if (result.size_warning) {
    spdlog::warn("student has {:.3f} of the teacher's parameters (target <= 1/3)",
                 result.size_ratio);
  }
  if (config.init_from_teacher) {
    student.copy_matching(teacher, ParamGroup::prompt_encoder);
    student.copy_matching(teacher, ParamGroup::mask_decoder);
  }
  result.teacher_checksum_before = teacher.params().checksum();

  TrainConfig tc = config.train;
  tc.freeze_encoder = false;
  Trainer trainer(student, tc, sampler, config.loss);
  trainer.set_teacher(&teacher);
  result.report = trainer.fit(train, val, out_dir);

  result.teacher_checksum_after = teacher.params().checksum();
  result.provenance = {{"teacher_checkpoint", config.teacher_checkpoint},
                       {"teacher_checksum", result.teacher_checksum_before},
                       {"teacher_parameters", teacher.parameter_partition().total()},
                       {"student_parameters", student.parameter_partition().total()},
                       {"size_ratio", result.size_ratio},
                       {"alpha", config.loss.alpha}};
  result.report.extra = result.provenance;
  result.report.extra["size_warning"] = result.size_warning;
  result.report.extra["teacher_checksum_after"] = result.teacher_checksum_after;
  return result;
}

} // namespace promptseg
