#include <gtest/gtest.h>

#include "promptseg/model.hpp"
#include "promptseg/objectives.hpp"
#include "test_support.hpp"

using namespace promptseg;
using namespace promptseg::testing;
using ag::Matrix;

namespace {

ModelConfig tiny_config() { return tiny_model_config(); }

ImageGrid random_image(int h, int w, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  ImageGrid img(h, w);
  for (auto &v : img.values()) {
    v = u(rng);
  }
  return img;
}

PromptSet sample_prompts()
{
  PromptSet p;
  p.points = {{3, 4, Label::positive}, {10, 9, Label::negative}};
  p.box = Box{2, 2, 12, 13};
  return p;
}

} // namespace

TEST(Model, PartitionCountsAddUp)
{
  PromptableModel m(ModelConfig::teacher_default());
  const auto part = m.parameter_partition();
  EXPECT_EQ(part.total(), m.params().total_count());
  EXPECT_GT(part.image_encoder, 0u);
  EXPECT_GT(part.prompt_encoder, 0u);
  EXPECT_GT(part.mask_decoder, 0u);
  size_t by_hand = 0;
  for (const auto &p : m.params().all()) {
    by_hand += static_cast<size_t>(p.var.value().size());
  }
  EXPECT_EQ(by_hand, part.total());
}

TEST(Model, StudentIsAtMostAThirdOfTeacher)
{
  const double t = PromptableModel(ModelConfig::teacher_default()).parameter_partition().total();
  const double s = PromptableModel(ModelConfig::student_default()).parameter_partition().total();
  EXPECT_LE(s / t, 1.0 / 3.0);
}

TEST(Model, InitIsDeterministicPerSeed)
{
  ModelConfig c = tiny_config();
  PromptableModel a(c), b(c);
  EXPECT_EQ(a.params().checksum(), b.params().checksum());
  c.init_seed = 6;
  PromptableModel d(c);
  EXPECT_NE(a.params().checksum(), d.params().checksum());
}

TEST(Model, PredictShapesAndThreshold)
{
  PromptableModel m(tiny_config());
  const ImageGrid img = random_image(16, 16, 1);
  const Prediction p = m.predict(img, sample_prompts());
  EXPECT_EQ(p.logits.height(), 16);
  EXPECT_EQ(p.logits.width(), 16);
  EXPECT_EQ(p.mask, binarize(p.logits, m.config().mask_threshold));
  // Same inputs, same output.
  EXPECT_EQ(m.predict(img, sample_prompts()).logits, p.logits);
}

TEST(Model, BinarizeIsInclusiveAtThreshold)
{
  MaskLogits l(1, 3);
  l(0, 0) = 0.0; // sigmoid = 0.5
  l(0, 1) = -1e-9;
  l(0, 2) = 3.0;
  const BinaryMask m = binarize(l, 0.5);
  EXPECT_EQ(m(0, 0), 1);
  EXPECT_EQ(m(0, 1), 0);
  EXPECT_EQ(m(0, 2), 1);
}

TEST(Model, EmptyPromptAndBadShapesRejected)
{
  PromptableModel m(tiny_config());
  EXPECT_THROW(m.predict(random_image(16, 16, 1), PromptSet{}), InvalidArgument);
  // Not a multiple of the patch size.
  EXPECT_THROW(m.encode_image(random_image(15, 16, 1)), InvalidArgument);
  PromptSet out_of_bounds;
  out_of_bounds.points = {{40, 2, Label::positive}};
  EXPECT_THROW(m.predict(random_image(16, 16, 1), out_of_bounds), InvalidArgument);
}

TEST(Model, FrozenEncoderRecordsNoGraph)
{
  PromptableModel m(tiny_config());
  m.set_encoder_frozen(true);
  const ImageEmbedding e = m.encode_image(random_image(16, 16, 2));
  EXPECT_FALSE(e.tokens.requires_grad());
  m.set_encoder_frozen(false);
  EXPECT_TRUE(m.encode_image(random_image(16, 16, 2)).tokens.requires_grad());
}

TEST(Model, EndToEndGradientMatchesFiniteDifferences)
{
  PromptableModel m(tiny_config());
  m.set_encoder_frozen(false);
  const ImageGrid img = random_image(16, 16, 3);
  const PromptSet prompts = sample_prompts();
  BinaryMask gt(16, 16);
  for (int r = 3; r < 11; ++r) {
    for (int c = 2; c < 9; ++c) {
      gt(r, c) = 1;
    }
  }
  const Matrix target = mask_to_matrix(gt);
  LossConfig loss;

  auto forward_loss = [&] {
    ag::NoGradGuard guard;
    const auto emb = m.encode_image(img);
    const auto logits = m.decode_mask(emb, m.encode_prompts(prompts, 16, 16));
    return dicefocal_loss(logits.value(), target, loss).value;
  };

  m.params().zero_grad();
  const auto emb = m.encode_image(img);
  const auto logits = m.decode_mask(emb, m.encode_prompts(prompts, 16, 16));
  ag::backward(logits, dicefocal_loss(logits.value(), target, loss).grad);

  // One parameter from each group.
  int checked = 0;
  for (ParamGroup group :
       {ParamGroup::image_encoder, ParamGroup::prompt_encoder, ParamGroup::mask_decoder}) {
    for (auto &p : m.params().all()) {
      if (p.group != group || !p.trainable) {
        continue;
      }
      Matrix &value = p.var.mutable_value();
      auto f = [&](const Matrix &x) {
        const Matrix saved = value;
        value = x;
        const double v = forward_loss();
        value = saved;
        return v;
      };
      const Matrix numeric = numeric_gradient(f, value, 1e-6);
      ASSERT_TRUE(p.var.node()->has_grad()) << p.name;
      EXPECT_LT(relative_error(p.var.grad(), numeric, 1e-9), 1e-4) << p.name;
      ++checked;
      break;
    }
  }
  EXPECT_EQ(checked, 3);
}

TEST(Model, CopyMatchingCopiesValues)
{
  ModelConfig a = tiny_config();
  ModelConfig b = tiny_config();
  b.init_seed = 99;
  PromptableModel src(a), dst(b);
  ASSERT_NE(src.params().checksum(ParamGroup::mask_decoder),
            dst.params().checksum(ParamGroup::mask_decoder));
  EXPECT_GT(dst.copy_matching(src, ParamGroup::mask_decoder), 0u);
  EXPECT_EQ(src.params().checksum(ParamGroup::mask_decoder),
            dst.params().checksum(ParamGroup::mask_decoder));
  EXPECT_NE(src.params().checksum(ParamGroup::image_encoder),
            dst.params().checksum(ParamGroup::image_encoder));
}

TEST(Model, ConfigValidation)
{
  ModelConfig c;
  c.embed_dim = 130; // not divisible by 4 heads
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.mask_threshold = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.patch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, SinusoidalPositionsBounded)
{
  const Matrix pe = sinusoidal_positions(4, 5, 16);
  EXPECT_EQ(pe.rows(), 20);
  EXPECT_EQ(pe.cols(), 16);
  EXPECT_LE(pe.cwiseAbs().maxCoeff(), 1.0);
}
