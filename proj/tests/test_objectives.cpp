#include <gtest/gtest.h>

#include <cmath>

#include "promptseg/model.hpp"
#include "promptseg/objectives.hpp"
#include "test_support.hpp"

using namespace promptseg;
using namespace promptseg::testing;
using ag::Matrix;

namespace {

// Reference formulas evaluated directly on probabilities.
double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double ref_dice(const Matrix &l, const Matrix &y, double smooth)
{
  double inter = 0, ps = 0, ys = 0;
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    const double p = sig(l.data()[i]);
    inter += p * y.data()[i];
    ps += p;
    ys += y.data()[i];
  }
  return 1.0 - (2.0 * inter + smooth) / (ps + ys + smooth);
}

double ref_focal(const Matrix &l, const Matrix &y, double gamma)
{
  double total = 0;
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    const double p = sig(l.data()[i]);
    const double pt = y.data()[i] > 0.5 ? p : 1.0 - p;
    total += -std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  return total / static_cast<double>(l.size());
}

double ref_kl(const Matrix &s, const Matrix &t)
{
  double total = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double a = sig(t.data()[i]);
    const double b = sig(s.data()[i]);
    total += a * std::log(a / b) + (1 - a) * std::log((1 - a) / (1 - b));
  }
  return total / static_cast<double>(s.size());
}

} // namespace

TEST(Objectives, ValuesMatchReferenceFormulas)
{
  LossConfig cfg;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix l = random_matrix(8, 8, rng, -4, 4);
    const Matrix y = random_binary(8, 8, rng);
    const Matrix t = random_matrix(8, 8, rng, -4, 4);
    EXPECT_NEAR(dice_loss(l, y, cfg.smooth).value, ref_dice(l, y, cfg.smooth), 1e-12);
    EXPECT_NEAR(focal_loss(l, y, 2.0).value, ref_focal(l, y, 2.0), 1e-12);
    EXPECT_NEAR(dicefocal_loss(l, y, cfg).value,
                ref_dice(l, y, cfg.smooth) + ref_focal(l, y, 2.0), 1e-12);
    EXPECT_NEAR(kl_distill_loss(l, t).value, ref_kl(l, t), 1e-12);
    const double a = cfg.alpha;
    EXPECT_NEAR(student_loss(l, y, t, cfg).value,
                (1 - a) * (ref_dice(l, y, cfg.smooth) + ref_focal(l, y, 2.0)) + a * ref_kl(l, t),
                1e-12);
  }
}

TEST(Objectives, HandComputedDice)
{
  // Logit 0 gives p = 0.5 everywhere; 2x2 image with one positive pixel.
  Matrix l = Matrix::Zero(2, 2);
  Matrix y = Matrix::Zero(2, 2);
  y(0, 0) = 1;
  // inter 0.5, sum p 2, sum y 1 -> 1 - 1/3
  EXPECT_NEAR(dice_loss(l, y, 0.0).value, 2.0 / 3.0, 1e-15);
}

TEST(Objectives, FocalWithGammaZeroIsCrossEntropy)
{
  std::mt19937_64 rng(7);
  const Matrix l = random_matrix(8, 8, rng, -5, 5);
  const Matrix y = random_binary(8, 8, rng);
  EXPECT_NEAR(focal_loss(l, y, 0.0).value, binary_cross_entropy(l, y), 1e-12);
}

TEST(Objectives, FocalDownweightsConfidentPixels)
{
  Matrix y = Matrix::Ones(1, 1);
  const double easy = focal_loss(Matrix::Constant(1, 1, 4.0), y, 2.0).value;
  const double easy_bce = binary_cross_entropy(Matrix::Constant(1, 1, 4.0), y);
  EXPECT_LT(easy, easy_bce * 0.01);
}

TEST(Objectives, GradientsMatchFiniteDifferences)
{
  LossConfig cfg;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const Matrix l = random_matrix(8, 8, rng, -3, 3);
    const Matrix y = random_binary(8, 8, rng);
    const Matrix t = random_matrix(8, 8, rng, -3, 3);
    auto check = [&](auto value_fn, const Matrix &grad, const char *name) {
      const Matrix num = numeric_gradient(value_fn, l);
      EXPECT_LT(relative_error(grad, num), 1e-6) << name << " seed " << seed;
    };
    check([&](const Matrix &x) { return dice_loss(x, y, cfg.smooth).value; },
          dice_loss(l, y, cfg.smooth).grad, "dice");
    check([&](const Matrix &x) { return focal_loss(x, y, 2.0).value; },
          focal_loss(l, y, 2.0).grad, "focal");
    check([&](const Matrix &x) { return dicefocal_loss(x, y, cfg).value; },
          dicefocal_loss(l, y, cfg).grad, "dicefocal");
    check([&](const Matrix &x) { return kl_distill_loss(x, t).value; },
          kl_distill_loss(l, t).grad, "kl");
    check([&](const Matrix &x) { return student_loss(x, y, t, cfg).value; },
          student_loss(l, y, t, cfg).grad, "student");
  }
}

TEST(Objectives, StudentLossBoundaries)
{
  std::mt19937_64 rng(9);
  const Matrix l = random_matrix(8, 8, rng, -3, 3);
  const Matrix y = random_binary(8, 8, rng);
  const Matrix t = random_matrix(8, 8, rng, -3, 3);
  LossConfig cfg;
  cfg.alpha = 0.0;
  const auto s = student_loss(l, y, t, cfg);
  const auto m = dicefocal_loss(l, y, cfg);
  EXPECT_NEAR(s.value, m.value, 1e-10);
  EXPECT_LT((s.grad - m.grad).cwiseAbs().maxCoeff(), 1e-10);

  cfg.alpha = 0.3;
  const auto same = student_loss(l, y, l, cfg);
  EXPECT_NEAR(same.distill_term, 0.0, 1e-10);
  EXPECT_NEAR(kl_distill_loss(l, l).value, 0.0, 1e-10);

  cfg.alpha = 1.0;
  EXPECT_NEAR(student_loss(l, y, t, cfg).value, kl_distill_loss(l, t).value, 1e-12);
}

TEST(Objectives, KlIsNonNegative)
{
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    EXPECT_GE(kl_distill_loss(random_matrix(8, 8, rng, -6, 6), random_matrix(8, 8, rng, -6, 6))
                  .value,
              0.0);
  }
}

TEST(Objectives, ExtremeLogitsStayFinite)
{
  Matrix l(1, 4);
  l << -800, 800, -40, 40;
  Matrix y(1, 4);
  y << 1, 0, 0, 1;
  EXPECT_TRUE(std::isfinite(focal_loss(l, y, 2.0).value));
  EXPECT_TRUE(focal_loss(l, y, 2.0).grad.allFinite());
  EXPECT_TRUE(std::isfinite(dice_loss(l, y, 1e-6).value));
  EXPECT_TRUE(std::isfinite(kl_distill_loss(l, -l).value));
}

TEST(Objectives, ShapeMismatchThrows)
{
  EXPECT_THROW(dice_loss(Matrix::Zero(2, 2), Matrix::Zero(2, 3), 1e-6), ShapeError);
  EXPECT_THROW(kl_distill_loss(Matrix::Zero(2, 2), Matrix::Zero(3, 2)), ShapeError);
}

TEST(Objectives, ConfigValidation)
{
  LossConfig c;
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.focal_gamma = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.dice_weight = 0;
  c.focal_weight = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Objectives, GridOverloadsAgree)
{
  std::mt19937_64 rng(3);
  const Matrix l = random_matrix(4, 5, rng, -2, 2);
  MaskLogits logits = to_logits(l);
  BinaryMask gt(4, 5);
  gt(1, 1) = gt(2, 3) = 1;
  EXPECT_DOUBLE_EQ(dice_loss(logits, gt), dice_loss(l, mask_to_matrix(gt), 1e-6).value);
  EXPECT_DOUBLE_EQ(focal_loss(logits, gt), focal_loss(l, mask_to_matrix(gt), 2.0).value);
}
