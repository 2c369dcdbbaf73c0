#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptseg/dataset.hpp"
#include "promptseg/metrics.hpp"

namespace promptseg {

using MaskSet = std::map<std::string, BinaryMask>;

/// Mask propagation between consecutive frames.
class TrackerAdapter {
public:
  virtual ~TrackerAdapter() = default;
  virtual std::string name() const = 0;
  virtual void init(const ImageGrid &frame, const MaskSet &masks, int frame_index) = 0;
  virtual MaskSet propagate(const ImageGrid &next_frame, int frame_index) = 0;
};

/// Copies the previous masks forward.
class PreviousMaskTracker : public TrackerAdapter {
public:
  std::string name() const override { return "previous"; }
  void init(const ImageGrid &frame, const MaskSet &masks, int frame_index) override;
  MaskSet propagate(const ImageGrid &next_frame, int frame_index) override;

private:
  MaskSet masks_;
};

struct Offset {
  int dx = 0;
  int dy = 0;
  friend bool operator==(const Offset &, const Offset &) = default;
};

/// Integer translation maximizing normalized cross-correlation of `next` against `prev`
/// over offsets in [-radius, radius]^2. Ties keep the earlier candidate, starting at (0, 0).
Offset estimate_shift(const ImageGrid &prev, const ImageGrid &next, int radius = 8);

/// Shifts the previous masks by the estimated global frame translation.
class ShiftTracker : public TrackerAdapter {
public:
  explicit ShiftTracker(int radius = 8) : radius_(radius) {}
  std::string name() const override { return "shift"; }
  void init(const ImageGrid &frame, const MaskSet &masks, int frame_index) override;
  MaskSet propagate(const ImageGrid &next_frame, int frame_index) override;
  const std::vector<Offset> &offsets() const { return offsets_; }

private:
  int radius_;
  ImageGrid frame_;
  MaskSet masks_;
  std::vector<Offset> offsets_;
};

std::unique_ptr<TrackerAdapter> make_tracker(const std::string &name);

/// Mask with a prescribed DSC against gt: gt plus round(2|gt|(1-d)/d) background pixels
/// taken in row-major order. Throws when there is not enough background.
BinaryMask mask_with_dsc(const BinaryMask &gt, double target);

/// Emits, for every frame and object, a mask whose DSC against the loop's ground truth
/// follows a script (1.0 where the script is silent). Ignores init masks.
class ScriptedTracker : public TrackerAdapter {
public:
  ScriptedTracker(const CineLoop &loop, std::map<std::string, std::map<int, double>> script);
  std::string name() const override { return "scripted"; }
  void init(const ImageGrid &, const MaskSet &, int) override {}
  MaskSet propagate(const ImageGrid &next_frame, int frame_index) override;

private:
  const CineLoop &loop_;
  std::map<std::string, std::map<int, double>> script_;
};

struct TrackConfig {
  double dsc_floor = 0.90;
  int click_budget = 10;
  std::uint64_t seed = 0;
  void validate() const;
};

struct ObjectTracking {
  std::string object_id;
  int interventions = 0;
  /// Mean of (floor - tracked DSC) over this object's interventions; 0 without any.
  double mean_drop = 0.0;
  double clicks_per_frame = 0.0;
  double clicks_per_loop = 0.0;
  int frame1_clicks = 0;
  int intervention_clicks = 0;
  std::vector<int> intervention_frames;
  std::vector<double> drops;
  /// DSC of the tracked mask (frame 0: the initial session result).
  std::vector<double> tracked_dsc;
  /// DSC after any intervention on that frame.
  std::vector<double> final_dsc;
};

struct TrackingReport {
  std::string loop_id;
  std::string view;
  int frame_count = 0;
  double dsc_floor = 0.9;
  std::vector<ObjectTracking> objects;
};

/// Frame 0 is segmented with clicks, later frames are tracked and corrected whenever an
/// object's tracked DSC falls below the floor. The tracker is re-initialized after each
/// corrected frame.
TrackingReport run_loop(ModelAdapter &model, TrackerAdapter &tracker, const CineLoop &loop,
                        const TrackConfig &config, const SamplerConfig &sampler = {});

struct TrackingSummary {
  std::string view;
  std::string object_id;
  int loops = 0;
  double interventions_per_loop = 0.0;
  /// Pooled over all interventions of the group.
  double mean_drop = 0.0;
  double clicks_per_frame = 0.0;
  double clicks_per_loop = 0.0;
};

/// Groups by (view, object) in sorted order.
std::vector<TrackingSummary> aggregate_tracking(std::span<const TrackingReport> reports);

nlohmann::json to_json(const TrackingReport &r);
/// Rows keyed by the table labels "Avg. num of interventions", "Avg. drop of DSC before
/// interventions", "Avg. num of clicks per frame" and "Avg. num of clicks per loop".
nlohmann::json to_json(std::span<const TrackingSummary> summary);

} // namespace promptseg
