#include "promptseg/prompting.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "promptseg/mask_ops.hpp"

namespace promptseg {

std::string to_string(StartMode mode) { return mode == StartMode::box ? "box" : "point"; }

StartMode start_mode_from_string(const std::string &text)
{
  if (text == "point") {
    return StartMode::point;
  }
  if (text == "box") {
    return StartMode::box;
  }
  throw InvalidArgument("start mode must be 'point' or 'box', got '" + text + "'");
}

void SamplerConfig::validate() const
{
  if (!(jitter_fraction >= 0.0 && jitter_fraction <= 1.0)) {
    throw ConfigError("sampler.jitter_fraction must lie in [0, 1]");
  }
  if (!(point_box_probability >= 0.0 && point_box_probability <= 1.0)) {
    throw ConfigError("sampler.point_box_probability must lie in [0, 1]");
  }
  if (eval_strategy != "center-of-largest-component") {
    throw ConfigError("sampler.eval_strategy must be 'center-of-largest-component'");
  }
  if (max_point_attempts < 1) {
    throw ConfigError("sampler.max_point_attempts must be >= 1");
  }
}

Centroid foreground_centroid(const BinaryMask &gt)
{
  double sx = 0.0, sy = 0.0;
  size_t n = 0;
  for (int r = 0; r < gt.height(); ++r) {
    for (int c = 0; c < gt.width(); ++c) {
      if (gt(r, c)) {
        sx += c;
        sy += r;
        ++n;
      }
    }
  }
  if (n == 0) {
    throw InvalidArgument("empty ground truth");
  }
  return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

Point nearest_foreground_to_centroid(const BinaryMask &gt)
{
  const Centroid cen = foreground_centroid(gt);
  Point best{-1, -1, Label::positive};
  double best_d = 0.0;
  for (int r = 0; r < gt.height(); ++r) {
    for (int c = 0; c < gt.width(); ++c) {
      if (!gt(r, c)) {
        continue;
      }
      const double d = (c - cen.x) * (c - cen.x) + (r - cen.y) * (r - cen.y);
      if (best.x < 0 || d < best_d) {
        best = {c, r, Label::positive};
        best_d = d;
      }
    }
  }
  return best;
}

PromptSet initial_prompt(const BinaryMask &gt, const SamplerConfig &config, SamplingMode mode,
                         std::mt19937_64 &rng)
{
  const auto tight = bounding_box(gt);
  if (!tight) {
    throw InvalidArgument("empty ground truth");
  }
  PromptSet prompts;
  if (mode == SamplingMode::eval) {
    prompts.points.push_back(nearest_foreground_to_centroid(gt));
    return prompts;
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool use_point = unit(rng) < config.point_box_probability;
  if (use_point) {
    const Centroid cen = foreground_centroid(gt);
    const double diag = std::hypot(tight->width(), tight->height());
    const double radius = config.jitter_fraction * diag;
    for (int attempt = 0; attempt < config.max_point_attempts; ++attempt) {
      // Uniform over the disk of the given radius.
      const double rho = radius * std::sqrt(unit(rng));
      const double theta = 2.0 * std::numbers::pi * unit(rng);
      const int x = static_cast<int>(std::lround(cen.x + rho * std::cos(theta)));
      const int y = static_cast<int>(std::lround(cen.y + rho * std::sin(theta)));
      if (gt.contains(y, x) && gt(y, x)) {
        prompts.points.push_back({x, y, Label::positive});
        return prompts;
      }
    }
    prompts.points.push_back(nearest_foreground_to_centroid(gt));
    return prompts;
  }

  // Loosely fitting box: each side moves outward independently.
  const double jx = config.jitter_fraction * tight->width();
  const double jy = config.jitter_fraction * tight->height();
  Box box = *tight;
  box.x0 -= static_cast<int>(std::lround(unit(rng) * jx));
  box.x1 += static_cast<int>(std::lround(unit(rng) * jx));
  box.y0 -= static_cast<int>(std::lround(unit(rng) * jy));
  box.y1 += static_cast<int>(std::lround(unit(rng) * jy));
  box.x0 = std::max(box.x0, 0);
  box.y0 = std::max(box.y0, 0);
  box.x1 = std::min(box.x1, gt.width());
  box.y1 = std::min(box.y1, gt.height());
  prompts.box = box;
  return prompts;
}

ErrorMap compute_error_map(const BinaryMask &pred, const BinaryMask &gt)
{
  if (!pred.same_shape(gt)) {
    throw ShapeError("compute_error_map: prediction and ground truth shapes differ");
  }
  return {mask_and_not(pred, gt), mask_and_not(gt, pred)};
}

Point center_of_largest_component(const BinaryMask &region)
{
  const Components comps = connected_components(region);
  if (comps.sizes.empty()) {
    throw InvalidArgument("error region is empty");
  }
  const auto largest = std::max_element(comps.sizes.begin(), comps.sizes.end());
  const int label = static_cast<int>(largest - comps.sizes.begin()) + 1;
  BinaryMask component(region.height(), region.width());
  for (size_t i = 0; i < region.size(); ++i) {
    component[i] = comps.labels[i] == label ? 1 : 0;
  }
  const Grid<double> dist = distance_transform(component);
  Point best{-1, -1, Label::positive};
  double best_d = -1.0;
  for (int r = 0; r < region.height(); ++r) {
    for (int c = 0; c < region.width(); ++c) {
      if (component(r, c) && dist(r, c) > best_d) {
        best_d = dist(r, c);
        best = {c, r, Label::positive};
      }
    }
  }
  return best;
}

std::optional<Point> next_click(const BinaryMask &pred, const BinaryMask &gt,
                                const SamplerConfig &config, SamplingMode mode,
                                std::mt19937_64 &rng)
{
  (void)config;
  const ErrorMap errors = compute_error_map(pred, gt);
  const size_t n_fp = count_foreground(errors.false_positive);
  const size_t n_fn = count_foreground(errors.false_negative);
  if (n_fp == 0 && n_fn == 0) {
    return std::nullopt;
  }
  const bool positive = n_fn >= n_fp;
  const BinaryMask &region = positive ? errors.false_negative : errors.false_positive;
  const Label label = positive ? Label::positive : Label::negative;

  if (mode == SamplingMode::eval) {
    Point p = center_of_largest_component(region);
    p.label = label;
    return p;
  }

  const size_t count = positive ? n_fn : n_fp;
  std::uniform_int_distribution<size_t> pick(0, count - 1);
  size_t target = pick(rng);
  for (int r = 0; r < region.height(); ++r) {
    for (int c = 0; c < region.width(); ++c) {
      if (region(r, c)) {
        if (target == 0) {
          return Point{c, r, label};
        }
        --target;
      }
    }
  }
  return std::nullopt; // unreachable
}

SessionResult simulate_session(const PredictFn &predict, const BinaryMask &gt,
                               const SessionOptions &options, const SamplerConfig &config,
                               std::mt19937_64 &rng, std::string image_id)
{
  if (options.budget < 1) {
    throw InvalidArgument("session budget must be >= 1");
  }
  SessionResult result;
  result.trace.image_id = std::move(image_id);
  PromptSet &prompts = result.prompts;

  auto record = [&](const ClickRecord &base) {
    result.final_mask = predict(prompts);
    if (!result.final_mask.same_shape(gt)) {
      throw ShapeError("model returned a mask whose shape differs from the ground truth");
    }
    ClickRecord rec = base;
    rec.dsc = dsc(result.final_mask, gt);
    result.trace.dsc_per_click.push_back(rec.dsc);
    result.trace.clicks.push_back(rec);
  };
  auto reached = [&]() {
    return options.stop_at_dsc && result.trace.dsc_per_click.back() >= *options.stop_at_dsc;
  };

  if (options.initial_mask) {
    const auto click = next_click(*options.initial_mask, gt, config, options.mode, rng);
    if (!click) {
      result.final_mask = *options.initial_mask;
      return result;
    }
    prompts.points.push_back(*click);
    record({*click, std::nullopt, 0.0});
  } else if (options.start == StartMode::box) {
    const auto tight = bounding_box(gt);
    if (!tight) {
      throw InvalidArgument("empty ground truth");
    }
    prompts.box = *tight;
    record({std::nullopt, *tight, 0.0});
  } else {
    const PromptSet first = initial_prompt(gt, config, options.mode, rng);
    prompts = first;
    record({first.points.empty() ? std::nullopt : std::optional<Point>(first.points.front()),
            first.box, 0.0});
  }

  while (static_cast<int>(result.trace.dsc_per_click.size()) < options.budget && !reached()) {
    const auto click = next_click(result.final_mask, gt, config, options.mode, rng);
    if (!click) {
      break;
    }
    prompts.points.push_back(*click);
    record({*click, std::nullopt, 0.0});
  }
  return result;
}

std::mt19937_64 derive_rng(std::uint64_t seed, const std::string &id)
{
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char ch : id) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

} // namespace promptseg
