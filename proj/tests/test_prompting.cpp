#include <gtest/gtest.h>

#include <cmath>
#include <queue>

#include "promptseg/mask_ops.hpp"
#include "promptseg/prompting.hpp"
#include "test_support.hpp"

using namespace promptseg;
using namespace promptseg::testing;

namespace {

BinaryMask disk(int h, int w, double cx, double cy, double radius)
{
  BinaryMask m(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if ((c - cx) * (c - cx) + (r - cy) * (r - cy) <= radius * radius) {
        m(r, c) = 1;
      }
    }
  }
  return m;
}

BinaryMask random_blobs(int h, int w, std::mt19937_64 &rng, int count)
{
  BinaryMask m(h, w);
  std::uniform_real_distribution<double> x(0, w), y(0, h), rad(1.5, 7.0);
  for (int k = 0; k < count; ++k) {
    const BinaryMask d = disk(h, w, x(rng), y(rng), rad(rng));
    for (size_t i = 0; i < m.size(); ++i) {
      m[i] |= d[i];
    }
  }
  return m;
}

/// Brute-force eval clicker: largest 4-connected component (first discovered on ties),
/// then the pixel with the largest distance to any background pixel, with the image
/// surrounded by background; row-major order breaks ties.
Point brute_force_center(const BinaryMask &region)
{
  const int h = region.height(), w = region.width();
  Grid<int> label(h, w, 0);
  std::vector<std::vector<std::pair<int, int>>> comps;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!region(r, c) || label(r, c)) {
        continue;
      }
      comps.emplace_back();
      std::queue<std::pair<int, int>> q;
      q.push({r, c});
      label(r, c) = static_cast<int>(comps.size());
      while (!q.empty()) {
        auto [rr, cc] = q.front();
        q.pop();
        comps.back().push_back({rr, cc});
        const int dr[] = {1, -1, 0, 0}, dc[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int nr = rr + dr[k], nc = cc + dc[k];
          if (region.contains(nr, nc) && region(nr, nc) && !label(nr, nc)) {
            label(nr, nc) = label(r, c);
            q.push({nr, nc});
          }
        }
      }
    }
  }
  size_t best = 0;
  for (size_t k = 1; k < comps.size(); ++k) {
    if (comps[k].size() > comps[best].size()) {
      best = k;
    }
  }
  const int target = static_cast<int>(best) + 1;
  long best_d2 = -1;
  Point best_p{};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (label(r, c) != target) {
        continue;
      }
      long d2 = std::numeric_limits<long>::max();
      for (int br = -1; br <= h; ++br) {
        for (int bc = -1; bc <= w; ++bc) {
          const bool inside = br >= 0 && bc >= 0 && br < h && bc < w;
          if (inside && label(br, bc) == target) {
            continue;
          }
          d2 = std::min(d2, static_cast<long>(br - r) * (br - r) + static_cast<long>(bc - c) * (bc - c));
        }
      }
      if (d2 > best_d2) {
        best_d2 = d2;
        best_p = {c, r, Label::positive};
      }
    }
  }
  return best_p;
}

} // namespace

TEST(Prompting, EvalFirstPromptOfCenteredDisk)
{
  std::mt19937_64 rng(0);
  const BinaryMask gt = disk(64, 64, 32, 32, 10);
  const PromptSet p = initial_prompt(gt, SamplerConfig{}, SamplingMode::eval, rng);
  ASSERT_EQ(p.points.size(), 1u);
  EXPECT_FALSE(p.box);
  EXPECT_EQ(p.points[0], (Point{32, 32, Label::positive}));
}

TEST(Prompting, EmptyGroundTruthRejected)
{
  std::mt19937_64 rng(0);
  try {
    initial_prompt(BinaryMask(8, 8), SamplerConfig{}, SamplingMode::eval, rng);
    FAIL();
  } catch (const InvalidArgument &e) {
    EXPECT_STREQ(e.what(), "empty ground truth");
  }
}

TEST(Prompting, ZeroJitterGivesCentroidOrTightBox)
{
  SamplerConfig cfg;
  cfg.jitter_fraction = 0.0;
  const BinaryMask gt = rect_mask(40, 40, 5, 8, 21, 30);
  const Box tight = *bounding_box(gt);
  int points = 0, boxes = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    std::mt19937_64 rng(s);
    const PromptSet p = initial_prompt(gt, cfg, SamplingMode::train, rng);
    if (p.box) {
      ++boxes;
      EXPECT_EQ(*p.box, tight);
      EXPECT_TRUE(p.points.empty());
    } else {
      ++points;
      ASSERT_EQ(p.points.size(), 1u);
      const Centroid c = foreground_centroid(gt);
      EXPECT_LE(std::hypot(p.points[0].x - c.x, p.points[0].y - c.y), 1.0);
      EXPECT_TRUE(gt(p.points[0].y, p.points[0].x));
    }
  }
  // Roughly equal split with probability 0.5.
  EXPECT_GT(points, 60);
  EXPECT_GT(boxes, 60);
}

TEST(Prompting, PointBoxProbabilityExtremes)
{
  SamplerConfig cfg;
  const BinaryMask gt = disk(32, 32, 16, 16, 6);
  cfg.point_box_probability = 1.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    std::mt19937_64 rng(s);
    EXPECT_FALSE(initial_prompt(gt, cfg, SamplingMode::train, rng).box);
  }
  cfg.point_box_probability = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    std::mt19937_64 rng(s);
    EXPECT_TRUE(initial_prompt(gt, cfg, SamplingMode::train, rng).box);
  }
}

TEST(Prompting, ErrorMapMatchesXor)
{
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::mt19937_64 rng(s);
    const BinaryMask pred = random_blobs(24, 24, rng, 3);
    const BinaryMask gt = random_blobs(24, 24, rng, 3);
    const ErrorMap e = compute_error_map(pred, gt);
    size_t xor_count = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      xor_count += pred[i] != gt[i];
      EXPECT_FALSE(e.false_positive[i] && e.false_negative[i]);
      EXPECT_EQ(e.false_positive[i], pred[i] && !gt[i]);
      EXPECT_EQ(e.false_negative[i], gt[i] && !pred[i]);
    }
    EXPECT_EQ(count_foreground(e.false_positive) + count_foreground(e.false_negative), xor_count);
  }
  EXPECT_THROW(compute_error_map(BinaryMask(2, 2), BinaryMask(2, 3)), ShapeError);
}

TEST(Prompting, ErrorMapBoundaries)
{
  const BinaryMask full(6, 6, 1), empty(6, 6);
  const ErrorMap e = compute_error_map(full, empty);
  EXPECT_EQ(e.false_positive, full);
  EXPECT_EQ(e.false_negative, empty);
  const ErrorMap same = compute_error_map(full, full);
  EXPECT_EQ(count_foreground(same.false_positive) + count_foreground(same.false_negative), 0u);
}

TEST(Prompting, NextClickPolarity)
{
  std::mt19937_64 rng(1);
  const BinaryMask gt = rect_mask(30, 30, 5, 5, 25, 25);
  const BinaryMask inside = rect_mask(30, 30, 10, 10, 20, 20);
  const BinaryMask outside = rect_mask(30, 30, 2, 2, 28, 28);
  for (auto mode : {SamplingMode::eval, SamplingMode::train}) {
    EXPECT_FALSE(next_click(gt, gt, {}, mode, rng));
    const auto pos = next_click(inside, gt, {}, mode, rng);
    ASSERT_TRUE(pos);
    EXPECT_EQ(pos->label, Label::positive);
    EXPECT_TRUE(gt(pos->y, pos->x) && !inside(pos->y, pos->x));
    const auto neg = next_click(outside, gt, {}, mode, rng);
    ASSERT_TRUE(neg);
    EXPECT_EQ(neg->label, Label::negative);
    EXPECT_TRUE(outside(neg->y, neg->x) && !gt(neg->y, neg->x));
  }
}

TEST(Prompting, TieResolvesToPositiveClick)
{
  std::mt19937_64 rng(0);
  BinaryMask gt(4, 4), pred(4, 4);
  gt(0, 0) = 1;   // false negative
  pred(3, 3) = 1; // false positive
  const auto click = next_click(pred, gt, {}, SamplingMode::eval, rng);
  ASSERT_TRUE(click);
  EXPECT_EQ(click->label, Label::positive);
  EXPECT_EQ(click->x, 0);
  EXPECT_EQ(click->y, 0);
}

TEST(Prompting, EvalClickMatchesBruteForce)
{
  for (std::uint64_t s = 0; s < 40; ++s) {
    std::mt19937_64 rng(s);
    const BinaryMask region = random_blobs(20, 24, rng, 4);
    if (count_foreground(region) == 0) {
      continue;
    }
    const Point lib = center_of_largest_component(region);
    const Point ref = brute_force_center(region);
    EXPECT_EQ(lib.x, ref.x) << "seed " << s;
    EXPECT_EQ(lib.y, ref.y) << "seed " << s;
  }
}

TEST(Prompting, JitterBounds)
{
  SamplerConfig cfg;
  for (std::uint64_t s = 0; s < 300; ++s) {
    std::mt19937_64 shape_rng(s);
    const BinaryMask gt = disk(48, 48, 10 + (s % 28), 12 + (s % 23), 3 + (s % 9));
    const Box tight = *bounding_box(gt);
    const Centroid c = foreground_centroid(gt);
    const double diag = std::hypot(tight.width(), tight.height());
    std::mt19937_64 rng(1000 + s);
    const PromptSet p = initial_prompt(gt, cfg, SamplingMode::train, rng);
    if (p.box) {
      EXPECT_TRUE(p.box->contains(tight));
      EXPECT_LE(tight.x0 - p.box->x0, cfg.jitter_fraction * tight.width() + 1);
      EXPECT_LE(p.box->x1 - tight.x1, cfg.jitter_fraction * tight.width() + 1);
      EXPECT_LE(tight.y0 - p.box->y0, cfg.jitter_fraction * tight.height() + 1);
      EXPECT_LE(p.box->y1 - tight.y1, cfg.jitter_fraction * tight.height() + 1);
      EXPECT_GE(p.box->x0, 0);
      EXPECT_LE(p.box->x1, 48);
    } else {
      const Point q = p.points.at(0);
      EXPECT_TRUE(gt(q.y, q.x));
      EXPECT_LE(std::hypot(q.x - c.x, q.y - c.y), cfg.jitter_fraction * diag + 1.0);
    }
  }
}

TEST(Prompting, SessionWithPerfectModel)
{
  std::mt19937_64 rng(0);
  const BinaryMask gt = disk(32, 32, 16, 16, 7);
  const auto r = simulate_session([&](const PromptSet &) { return gt; }, gt, SessionOptions{},
                                  SamplerConfig{}, rng);
  ASSERT_EQ(r.trace.dsc_per_click.size(), 1u);
  EXPECT_EQ(r.trace.dsc_per_click[0], 1.0);
}

TEST(Prompting, SessionWithEmptyModelClicksInsideGt)
{
  std::mt19937_64 rng(0);
  const BinaryMask gt = disk(32, 32, 16, 16, 7);
  std::vector<size_t> prompt_sizes;
  const auto r = simulate_session(
      [&](const PromptSet &p) {
        prompt_sizes.push_back(p.points.size());
        return BinaryMask(32, 32);
      },
      gt, SessionOptions{}, SamplerConfig{}, rng);
  ASSERT_EQ(r.trace.dsc_per_click.size(), 10u);
  for (const auto &click : r.trace.clicks) {
    ASSERT_TRUE(click.point);
    EXPECT_EQ(click.point->label, Label::positive);
    EXPECT_TRUE(gt(click.point->y, click.point->x));
  }
  // Monotone growth by exactly one point per call.
  for (size_t i = 0; i < prompt_sizes.size(); ++i) {
    EXPECT_EQ(prompt_sizes[i], i + 1);
  }
}

TEST(Prompting, BoxStartSession)
{
  std::mt19937_64 rng(0);
  const BinaryMask gt = disk(32, 32, 16, 16, 7);
  SessionOptions opt;
  opt.start = StartMode::box;
  opt.budget = 3;
  const auto r = simulate_session([&](const PromptSet &) { return BinaryMask(32, 32); }, gt, opt,
                                  SamplerConfig{}, rng);
  ASSERT_FALSE(r.trace.clicks.empty());
  EXPECT_TRUE(r.trace.clicks[0].box);
  EXPECT_EQ(*r.trace.clicks[0].box, *bounding_box(gt));
  EXPECT_EQ(r.trace.dsc_per_click.size(), 3u);
}

TEST(Prompting, DeterministicUnderSeed)
{
  const BinaryMask gt = disk(32, 32, 15, 17, 8);
  auto model = [&](const PromptSet &p) {
    // Prediction grows with the number of clicks.
    return disk(32, 32, 15, 17, std::min(2.0 * static_cast<double>(p.points.size()), 12.0));
  };
  for (auto mode : {SamplingMode::eval, SamplingMode::train}) {
    SessionOptions opt;
    opt.mode = mode;
    std::mt19937_64 a = derive_rng(42, "img"), b = derive_rng(42, "img");
    EXPECT_EQ(simulate_session(model, gt, opt, {}, a).trace,
              simulate_session(model, gt, opt, {}, b).trace);
  }
  // Streams differ per image id.
  EXPECT_NE(derive_rng(42, "a")(), derive_rng(42, "b")());
}

TEST(Prompting, InitialMaskAndStopThreshold)
{
  std::mt19937_64 rng(0);
  const BinaryMask gt = rect_mask(20, 20, 4, 4, 16, 16);
  SessionOptions opt;
  opt.initial_mask = rect_mask(20, 20, 4, 4, 16, 10);
  opt.stop_at_dsc = 0.9;
  const auto r = simulate_session([&](const PromptSet &) { return gt; }, gt, opt, {}, rng);
  ASSERT_EQ(r.trace.clicks.size(), 1u);
  // First click corrects the initial mask: positive, inside the missing half.
  ASSERT_TRUE(r.trace.clicks[0].point);
  EXPECT_EQ(r.trace.clicks[0].point->label, Label::positive);
  EXPECT_GE(r.trace.clicks[0].point->x, 10);
}

TEST(Prompting, SamplerValidation)
{
  SamplerConfig c;
  c.jitter_fraction = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.point_box_probability = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.eval_strategy = "random";
  EXPECT_THROW(c.validate(), ConfigError);
}
