#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "promptseg/types.hpp"

namespace promptseg {

struct ErrorMap {
  BinaryMask false_positive; // pred and not gt
  BinaryMask false_negative; // gt and not pred
};

enum class SamplingMode { train, eval };

/// How the first prompt of an evaluation session is formed.
enum class StartMode { point, box };
std::string to_string(StartMode mode);
StartMode start_mode_from_string(const std::string &text);

struct SamplerConfig {
  /// Maximum jitter as a fraction of the object scale.
  double jitter_fraction = 0.2;
  /// Probability of a point (rather than a box) as the first training prompt.
  double point_box_probability = 0.5;
  std::string eval_strategy = "center-of-largest-component";
  std::uint64_t rng_seed = 0;
  int max_point_attempts = 50;

  void validate() const;
  friend bool operator==(const SamplerConfig &, const SamplerConfig &) = default;
};

/// Mean (x, y) of foreground pixels.
struct Centroid {
  double x = 0.0;
  double y = 0.0;
};
Centroid foreground_centroid(const BinaryMask &gt);

/// Foreground pixel whose center is nearest the centroid (first in row-major order on ties).
Point nearest_foreground_to_centroid(const BinaryMask &gt);

/// Train mode draws a jittered centroid point or a loosened box; eval mode returns the
/// positive point nearest the centroid. Throws InvalidArgument("empty ground truth").
PromptSet initial_prompt(const BinaryMask &gt, const SamplerConfig &config, SamplingMode mode,
                         std::mt19937_64 &rng);

ErrorMap compute_error_map(const BinaryMask &pred, const BinaryMask &gt);

/// Corrective click from the dominant error region, or nullopt when pred == gt.
/// Ties between |fn| and |fp| resolve to a positive click.
std::optional<Point> next_click(const BinaryMask &pred, const BinaryMask &gt,
                                const SamplerConfig &config, SamplingMode mode,
                                std::mt19937_64 &rng);

/// Eval-mode click location: interior-most pixel of the largest component of `region`.
Point center_of_largest_component(const BinaryMask &region);

/// One entry per model call in a session.
struct ClickRecord {
  /// Set for point clicks; empty for a box-start step.
  std::optional<Point> point;
  std::optional<Box> box;
  double dsc = 0.0;
  friend bool operator==(const ClickRecord &, const ClickRecord &) = default;
};

struct InteractionTrace {
  std::string image_id;
  std::vector<double> dsc_per_click;
  std::vector<ClickRecord> clicks;
  friend bool operator==(const InteractionTrace &, const InteractionTrace &) = default;
};

using PredictFn = std::function<BinaryMask(const PromptSet &)>;

struct SessionOptions {
  int budget = 10;
  SamplingMode mode = SamplingMode::eval;
  StartMode start = StartMode::point;
  /// Stop once DSC reaches this value (used by loop tracking); unset means run to Done.
  std::optional<double> stop_at_dsc;
  /// When set, the first click corrects this mask instead of using an initial prompt.
  std::optional<BinaryMask> initial_mask;
};

struct SessionResult {
  InteractionTrace trace;
  PromptSet prompts;
  BinaryMask final_mask;
};

/// Click i is appended, the model re-run with all prompts so far and the DSC recorded.
SessionResult simulate_session(const PredictFn &predict, const BinaryMask &gt,
                               const SessionOptions &options, const SamplerConfig &config,
                               std::mt19937_64 &rng, std::string image_id = {});

/// Deterministic RNG stream per (seed, item id).
std::mt19937_64 derive_rng(std::uint64_t seed, const std::string &id);

} // namespace promptseg
