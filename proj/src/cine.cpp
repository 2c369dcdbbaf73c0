#include "promptseg/cine.hpp"

#include <cmath>

#include "promptseg/mask_ops.hpp"

namespace promptseg {

using nlohmann::json;

void PreviousMaskTracker::init(const ImageGrid &, const MaskSet &masks, int)
{
  masks_ = masks;
}

MaskSet PreviousMaskTracker::propagate(const ImageGrid &, int) { return masks_; }

Offset estimate_shift(const ImageGrid &prev, const ImageGrid &next, int radius)
{
  if (!prev.same_shape(next)) {
    throw ShapeError("estimate_shift: frame sizes differ");
  }
  const int h = prev.height();
  const int w = prev.width();
  auto ncc = [&](int dx, int dy) {
    // next(r, c) is compared with prev(r - dy, c - dx).
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    long n = 0;
    for (int r = std::max(0, dy); r < std::min(h, h + dy); ++r) {
      for (int c = std::max(0, dx); c < std::min(w, w + dx); ++c) {
        const double a = prev(r - dy, c - dx);
        const double b = next(r, c);
        sa += a;
        sb += b;
        saa += a * a;
        sbb += b * b;
        sab += a * b;
        ++n;
      }
    }
    if (n == 0) {
      return -2.0;
    }
    const double cov = sab - sa * sb / n;
    const double va = saa - sa * sa / n;
    const double vb = sbb - sb * sb / n;
    if (va <= 0.0 || vb <= 0.0) {
      return 0.0;
    }
    return cov / std::sqrt(va * vb);
  };
  Offset best{0, 0};
  double best_score = ncc(0, 0);
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const double s = ncc(dx, dy);
      if (s > best_score) {
        best_score = s;
        best = {dx, dy};
      }
    }
  }
  return best;
}

void ShiftTracker::init(const ImageGrid &frame, const MaskSet &masks, int)
{
  frame_ = frame;
  masks_ = masks;
}

MaskSet ShiftTracker::propagate(const ImageGrid &next_frame, int)
{
  const Offset off = estimate_shift(frame_, next_frame, radius_);
  offsets_.push_back(off);
  for (auto &[name, mask] : masks_) {
    mask = shift_mask(mask, off.dx, off.dy);
  }
  frame_ = next_frame;
  return masks_;
}

std::unique_ptr<TrackerAdapter> make_tracker(const std::string &name)
{
  if (name == "previous") {
    return std::make_unique<PreviousMaskTracker>();
  }
  if (name == "shift") {
    return std::make_unique<ShiftTracker>();
  }
  throw InvalidArgument("unknown tracker '" + name + "' (expected 'previous' or 'shift')");
}

BinaryMask mask_with_dsc(const BinaryMask &gt, double target)
{
  if (!(target > 0.0 && target <= 1.0)) {
    throw InvalidArgument("scripted DSC must lie in (0, 1]");
  }
  const double g = static_cast<double>(count_foreground(gt));
  auto extra = static_cast<size_t>(std::llround(2.0 * g * (1.0 - target) / target));
  BinaryMask out = gt;
  for (size_t i = 0; i < out.size() && extra > 0; ++i) {
    if (!out[i]) {
      out[i] = 1;
      --extra;
    }
  }
  if (extra > 0) {
    throw InvalidArgument("not enough background pixels for the scripted DSC");
  }
  return out;
}

ScriptedTracker::ScriptedTracker(const CineLoop &loop,
                                 std::map<std::string, std::map<int, double>> script)
    : loop_(loop), script_(std::move(script))
{
}

MaskSet ScriptedTracker::propagate(const ImageGrid &, int frame_index)
{
  MaskSet out;
  for (const auto &[name, masks] : loop_.objects) {
    const BinaryMask &gt = masks.at(static_cast<size_t>(frame_index));
    double target = 1.0;
    if (const auto it = script_.find(name); it != script_.end()) {
      if (const auto jt = it->second.find(frame_index); jt != it->second.end()) {
        target = jt->second;
      }
    }
    out[name] = target == 1.0 ? gt : mask_with_dsc(gt, target);
  }
  return out;
}

void TrackConfig::validate() const
{
  if (!(dsc_floor >= 0.0 && dsc_floor < 1.0)) {
    throw ConfigError("track.dsc_floor must lie in [0, 1)");
  }
  if (click_budget < 1) {
    throw ConfigError("track.click_budget must be >= 1");
  }
}

TrackingReport run_loop(ModelAdapter &model, TrackerAdapter &tracker, const CineLoop &loop,
                        const TrackConfig &config, const SamplerConfig &sampler)
{
  config.validate();
  loop.validate();
  TrackingReport report;
  report.loop_id = loop.id;
  report.view = loop.view;
  report.frame_count = loop.frame_count();
  report.dsc_floor = config.dsc_floor;

  auto session = [&](int t, const std::string &name, const std::optional<BinaryMask> &start) {
    const BinaryMask &gt = loop.objects.at(name)[static_cast<size_t>(t)];
    const std::string id = loop.id + "/" + name + "/" + std::to_string(t);
    model.set_image(loop.frames[static_cast<size_t>(t)], id, gt);
    SessionOptions so;
    so.budget = config.click_budget;
    so.mode = SamplingMode::eval;
    so.stop_at_dsc = config.dsc_floor;
    so.initial_mask = start;
    auto rng = derive_rng(config.seed, id);
    const PredictFn predict = [&](const PromptSet &p) { return model.predict(p); };
    return simulate_session(predict, gt, so, sampler, rng, id);
  };

  std::map<std::string, ObjectTracking> per_object;
  MaskSet current;
  for (const auto &[name, masks] : loop.objects) {
    ObjectTracking &o = per_object[name];
    o.object_id = name;
    const SessionResult r = session(0, name, std::nullopt);
    o.frame1_clicks = static_cast<int>(r.trace.dsc_per_click.size());
    const double d = dsc(r.final_mask, masks[0]);
    o.tracked_dsc.push_back(d);
    o.final_dsc.push_back(d);
    current[name] = r.final_mask;
  }
  tracker.init(loop.frames[0], current, 0);

  for (int t = 1; t < loop.frame_count(); ++t) {
    MaskSet tracked = tracker.propagate(loop.frames[static_cast<size_t>(t)], t);
    bool corrected = false;
    for (const auto &[name, masks] : loop.objects) {
      const auto it = tracked.find(name);
      if (it == tracked.end()) {
        throw ShapeError("tracker returned no mask for object '" + name + "' at frame " +
                         std::to_string(t));
      }
      const BinaryMask &gt = masks[static_cast<size_t>(t)];
      if (!it->second.same_shape(gt)) {
        throw ShapeError("tracker returned a " + std::to_string(it->second.height()) + "x" +
                         std::to_string(it->second.width()) + " mask for object '" + name +
                         "' at frame " + std::to_string(t) + ", expected " +
                         std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
      }
      ObjectTracking &o = per_object[name];
      const double d = dsc(it->second, gt);
      o.tracked_dsc.push_back(d);
      if (d < config.dsc_floor) {
        ++o.interventions;
        o.intervention_frames.push_back(t);
        o.drops.push_back(config.dsc_floor - d);
        const SessionResult r = session(t, name, it->second);
        o.intervention_clicks += static_cast<int>(r.trace.dsc_per_click.size());
        it->second = r.final_mask;
        corrected = true;
      }
      o.final_dsc.push_back(dsc(it->second, gt));
    }
    if (corrected) {
      tracker.init(loop.frames[static_cast<size_t>(t)], tracked, t);
    }
  }

  for (auto &[name, o] : per_object) {
    if (!o.drops.empty()) {
      double sum = 0.0;
      for (double d : o.drops) {
        sum += d;
      }
      o.mean_drop = sum / static_cast<double>(o.drops.size());
    }
    const int total = o.frame1_clicks + o.intervention_clicks;
    o.clicks_per_loop = total;
    o.clicks_per_frame = static_cast<double>(total) / report.frame_count;
    report.objects.push_back(std::move(o));
  }
  return report;
}

std::vector<TrackingSummary> aggregate_tracking(std::span<const TrackingReport> reports)
{
  if (reports.empty()) {
    throw InvalidArgument("aggregate_tracking: no reports");
  }
  struct Acc {
    int loops = 0;
    double interventions = 0, drop_sum = 0, cpf = 0, cpl = 0;
    int drop_count = 0;
  };
  std::map<std::pair<std::string, std::string>, Acc> groups;
  for (const auto &r : reports) {
    for (const auto &o : r.objects) {
      Acc &a = groups[{r.view, o.object_id}];
      ++a.loops;
      a.interventions += o.interventions;
      for (double d : o.drops) {
        a.drop_sum += d;
      }
      a.drop_count += static_cast<int>(o.drops.size());
      a.cpf += o.clicks_per_frame;
      a.cpl += o.clicks_per_loop;
    }
  }
  std::vector<TrackingSummary> out;
  for (const auto &[key, a] : groups) {
    TrackingSummary s;
    s.view = key.first;
    s.object_id = key.second;
    s.loops = a.loops;
    s.interventions_per_loop = a.interventions / a.loops;
    s.mean_drop = a.drop_count > 0 ? a.drop_sum / a.drop_count : 0.0;
    s.clicks_per_frame = a.cpf / a.loops;
    s.clicks_per_loop = a.cpl / a.loops;
    out.push_back(s);
  }
  return out;
}

json to_json(const TrackingReport &r)
{
  json objects = json::array();
  for (const auto &o : r.objects) {
    objects.push_back({{"object_id", o.object_id},
                       {"interventions", o.interventions},
                       {"mean_drop", o.mean_drop},
                       {"clicks_per_frame", o.clicks_per_frame},
                       {"clicks_per_loop", o.clicks_per_loop},
                       {"frame1_clicks", o.frame1_clicks},
                       {"intervention_clicks", o.intervention_clicks},
                       {"intervention_frames", o.intervention_frames},
                       {"drops", o.drops},
                       {"tracked_dsc", o.tracked_dsc},
                       {"final_dsc", o.final_dsc}});
  }
  return {{"loop_id", r.loop_id},
          {"view", r.view},
          {"frame_count", r.frame_count},
          {"dsc_floor", r.dsc_floor},
          {"objects", objects}};
}

json to_json(std::span<const TrackingSummary> summary)
{
  json rows = json::array();
  for (const auto &s : summary) {
    rows.push_back({{"view", s.view},
                    {"object", s.object_id},
                    {"loops", s.loops},
                    {"Avg. num of interventions", s.interventions_per_loop},
                    {"Avg. drop of DSC before interventions", s.mean_drop},
                    {"Avg. num of clicks per frame", s.clicks_per_frame},
                    {"Avg. num of clicks per loop", s.clicks_per_loop}});
  }
  return rows;
}

} // namespace promptseg
