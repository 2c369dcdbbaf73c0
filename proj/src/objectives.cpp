#include "promptseg/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "promptseg/model.hpp"

namespace promptseg {

using ag::Matrix;

namespace {

void check_shapes(const Matrix &a, const Matrix &b, const char *what)
{
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shapes differ (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

double sigmoid(double x)
{
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

} // namespace

void LossConfig::validate() const
{
  if (!(focal_gamma >= 0.0)) {
    throw ConfigError("loss.focal_gamma must be >= 0");
  }
  if (!(dice_weight >= 0.0) || !(focal_weight >= 0.0) || !(dice_weight + focal_weight > 0.0)) {
    throw ConfigError("loss.dice_weight and loss.focal_weight must be >= 0 with a positive sum");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("loss.alpha must lie in [0, 1]");
  }
  if (!(smooth > 0.0)) {
    throw ConfigError("loss.smooth must be > 0");
  }
  if (!(prob_epsilon > 0.0 && prob_epsilon < 0.5)) {
    throw ConfigError("loss.prob_epsilon must lie in (0, 0.5)");
  }
}

LossTerm dice_loss(const Matrix &logits, const Matrix &target, double smooth)
{
  check_shapes(logits, target, "dice_loss");
  const Matrix p = logits.unaryExpr([](double v) { return sigmoid(v); });
  const double inter = p.cwiseProduct(target).sum();
  const double denom = p.sum() + target.sum() + smooth;
  const double numer = 2.0 * inter + smooth;
  LossTerm out;
  out.value = 1.0 - numer / denom;
  // dL/dp_i = -(2 y_i denom - numer) / denom^2
  const Matrix dp = (target * (2.0 * denom)).array() - numer;
  out.grad = -(dp.array() / (denom * denom)) * p.array() * (1.0 - p.array());
  return out;
}

LossTerm focal_loss(const Matrix &logits, const Matrix &target, double gamma)
{
  check_shapes(logits, target, "focal_loss");
  const double n = static_cast<double>(logits.size());
  LossTerm out;
  out.grad.resize(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double l = logits.data()[i];
    const double y = target.data()[i];
    const double p = sigmoid(l);
    const double log_p = -softplus(-l);
    const double log_q = -softplus(l);
    // Positive-class and negative-class contributions; y is 0 or 1 for masks but the
    // expression stays valid for soft targets.
    const double q = 1.0 - p;
    const double qg = std::pow(q, gamma);
    const double pg = std::pow(p, gamma);
    const double f_pos = -qg * log_p;
    const double f_neg = -pg * log_q;
    total += y * f_pos + (1.0 - y) * f_neg;
    const double g_pos = gamma * qg * p * log_p - qg * q;
    const double g_neg = -gamma * pg * q * log_q + pg * p;
    out.grad.data()[i] = (y * g_pos + (1.0 - y) * g_neg) / n;
  }
  out.value = total / n;
  return out;
}

LossTerm dicefocal_loss(const Matrix &logits, const Matrix &target, const LossConfig &config)
{
  check_shapes(logits, target, "dicefocal_loss");
  LossTerm out;
  out.value = 0.0;
  out.grad = Matrix::Zero(logits.rows(), logits.cols());
  if (config.dice_weight != 0.0) {
    LossTerm d = dice_loss(logits, target, config.smooth);
    out.value += config.dice_weight * d.value;
    out.grad += config.dice_weight * d.grad;
  }
  if (config.focal_weight != 0.0) {
    LossTerm f = focal_loss(logits, target, config.focal_gamma);
    out.value += config.focal_weight * f.value;
    out.grad += config.focal_weight * f.grad;
  }
  return out;
}

LossTerm kl_distill_loss(const Matrix &student_logits, const Matrix &teacher_logits,
                         double epsilon)
{
  check_shapes(student_logits, teacher_logits, "kl_distill_loss");
  const double n = static_cast<double>(student_logits.size());
  LossTerm out;
  out.grad.resize(student_logits.rows(), student_logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < student_logits.size(); ++i) {
    const double t = std::clamp(sigmoid(teacher_logits.data()[i]), epsilon, 1.0 - epsilon);
    const double s_raw = sigmoid(student_logits.data()[i]);
    const double s = std::clamp(s_raw, epsilon, 1.0 - epsilon);
    total += t * std::log(t / s) + (1.0 - t) * std::log((1.0 - t) / (1.0 - s));
    const bool clamped = s_raw < epsilon || s_raw > 1.0 - epsilon;
    out.grad.data()[i] = clamped ? 0.0 : (s - t) / n;
  }
  // Rounding can leave a tiny negative sum for identical inputs.
  out.value = std::max(0.0, total / n);
  return out;
}

StudentLossTerm student_loss(const Matrix &student_logits, const Matrix &target,
                             const Matrix &teacher_logits, const LossConfig &config)
{
  const LossTerm mask = dicefocal_loss(student_logits, target, config);
  const LossTerm distill = kl_distill_loss(student_logits, teacher_logits, config.prob_epsilon);
  StudentLossTerm out;
  out.mask_term = mask.value;
  out.distill_term = distill.value;
  out.value = (1.0 - config.alpha) * mask.value + config.alpha * distill.value;
  out.grad = (1.0 - config.alpha) * mask.grad + config.alpha * distill.grad;
  return out;
}

double binary_cross_entropy(const Matrix &logits, const Matrix &target)
{
  check_shapes(logits, target, "binary_cross_entropy");
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double l = logits.data()[i];
    const double y = target.data()[i];
    total += y * softplus(-l) + (1.0 - y) * softplus(l);
  }
  return total / static_cast<double>(logits.size());
}

Matrix mask_to_matrix(const BinaryMask &mask)
{
  Matrix m(mask.height(), mask.width());
  for (size_t i = 0; i < mask.size(); ++i) {
    m.data()[i] = mask[i] ? 1.0 : 0.0;
  }
  return m;
}

double dice_loss(const MaskLogits &logits, const BinaryMask &target, double smooth)
{
  return dice_loss(to_matrix(logits), mask_to_matrix(target), smooth).value;
}

double focal_loss(const MaskLogits &logits, const BinaryMask &target, double gamma)
{
  return focal_loss(to_matrix(logits), mask_to_matrix(target), gamma).value;
}

double dicefocal_loss(const MaskLogits &logits, const BinaryMask &target, const LossConfig &config)
{
  return dicefocal_loss(to_matrix(logits), mask_to_matrix(target), config).value;
}

double kl_distill_loss(const MaskLogits &student_logits, const MaskLogits &teacher_logits,
                       double epsilon)
{
  return kl_distill_loss(to_matrix(student_logits), to_matrix(teacher_logits), epsilon).value;
}

double student_loss(const MaskLogits &student_logits, const BinaryMask &target,
                    const MaskLogits &teacher_logits, const LossConfig &config)
{
  return student_loss(to_matrix(student_logits), mask_to_matrix(target),
                      to_matrix(teacher_logits), config)
      .value;
}

} // namespace promptseg
