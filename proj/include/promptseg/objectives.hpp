#pragma once

#include "promptseg/autograd.hpp"
#include "promptseg/types.hpp"

namespace promptseg {

struct LossConfig {
  double focal_gamma = 2.0;
  double dice_weight = 1.0;
  double focal_weight = 1.0;
  /// Weight of the distillation term in the student objective.
  double alpha = 0.1;
  /// Dice denominator stabilizer.
  double smooth = 1e-6;
  /// Probability clamp for the KL term.
  double prob_epsilon = 1e-7;

  void validate() const;
  friend bool operator==(const LossConfig &, const LossConfig &) = default;
};

/// Scalar loss together with its gradient with respect to the logits.
struct LossTerm {
  double value = 0.0;
  ag::Matrix grad;
};

struct StudentLossTerm {
  double value = 0.0;
  double mask_term = 0.0;
  double distill_term = 0.0;
  ag::Matrix grad;
};

/// 1 - (2 sum(p y) + smooth) / (sum(p) + sum(y) + smooth), p = sigmoid(logits).
LossTerm dice_loss(const ag::Matrix &logits, const ag::Matrix &target, double smooth);
/// Mean over pixels of -(1 - p_t)^gamma * log(p_t).
LossTerm focal_loss(const ag::Matrix &logits, const ag::Matrix &target, double gamma);
LossTerm dicefocal_loss(const ag::Matrix &logits, const ag::Matrix &target,
                        const LossConfig &config);
/// Mean per-pixel Bernoulli KL(teacher || student); the gradient is for the student logits.
LossTerm kl_distill_loss(const ag::Matrix &student_logits, const ag::Matrix &teacher_logits,
                         double epsilon = 1e-7);
/// (1 - alpha) * dicefocal(student, target) + alpha * KL(teacher || student).
StudentLossTerm student_loss(const ag::Matrix &student_logits, const ag::Matrix &target,
                             const ag::Matrix &teacher_logits, const LossConfig &config);

/// Mean binary cross-entropy, used as the gamma = 0 reference.
double binary_cross_entropy(const ag::Matrix &logits, const ag::Matrix &target);

ag::Matrix mask_to_matrix(const BinaryMask &mask);

double dice_loss(const MaskLogits &logits, const BinaryMask &target, double smooth = 1e-6);
double focal_loss(const MaskLogits &logits, const BinaryMask &target, double gamma = 2.0);
double dicefocal_loss(const MaskLogits &logits, const BinaryMask &target,
                      const LossConfig &config);
double kl_distill_loss(const MaskLogits &student_logits, const MaskLogits &teacher_logits,
                       double epsilon = 1e-7);
double student_loss(const MaskLogits &student_logits, const BinaryMask &target,
                    const MaskLogits &teacher_logits, const LossConfig &config);

} // namespace promptseg
