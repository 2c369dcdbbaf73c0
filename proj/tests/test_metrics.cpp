#include <gtest/gtest.h>

#include <algorithm>

#include "promptseg/mask_ops.hpp"
#include "promptseg/metrics.hpp"
#include "test_support.hpp"

using namespace promptseg;
using namespace promptseg::testing;

namespace {

InteractionTrace trace(std::string id, std::vector<double> d)
{
  InteractionTrace t;
  t.image_id = std::move(id);
  t.dsc_per_click = std::move(d);
  return t;
}

} // namespace

TEST(Metrics, DscExamples)
{
  const BinaryMask a = rect_mask(4, 4, 0, 0, 2, 2);
  EXPECT_EQ(dsc(a, a), 1.0);
  EXPECT_EQ(dsc(a, rect_mask(4, 4, 2, 2, 4, 4)), 0.0);
  // |A| = 4, |B| = 4, overlap 2
  EXPECT_EQ(dsc(a, rect_mask(4, 4, 0, 1, 2, 3)), 0.5);
  EXPECT_EQ(dsc(BinaryMask(3, 3), BinaryMask(3, 3)), 1.0);
  EXPECT_THROW(dsc(BinaryMask(3, 3), BinaryMask(3, 4)), ShapeError);
}

TEST(Metrics, NocExamples)
{
  const std::vector<InteractionTrace> t = {trace("a", {0.85, 0.9}),
                                           trace("b", {0.1, 0.5, 0.95}),
                                           trace("c", {0.1, 0.2, 0.3})};
  EXPECT_DOUBLE_EQ(noc_at(0.8, t, 20), (1.0 + 3.0 + 20.0) / 3.0);
  const std::vector<InteractionTrace> all_first = {trace("a", {0.9}), trace("b", {0.95, 1.0})};
  EXPECT_DOUBLE_EQ(noc_at(0.8, all_first, 20), 1.0);
  const std::vector<InteractionTrace> never = {trace("a", {0.1}), trace("b", {0.2, 0.3})};
  EXPECT_DOUBLE_EQ(noc_at(0.8, never, 20), 20.0);
  EXPECT_THROW(noc_at(0.8, std::vector<InteractionTrace>{}, 20), InvalidArgument);
}

TEST(Metrics, FailureRateExamples)
{
  const std::vector<InteractionTrace> t = {trace("a", {0.9}), trace("b", {0.95}),
                                           trace("c", {0.5, 0.85}), trace("d", {0.1, 0.2})};
  EXPECT_DOUBLE_EQ(failure_rate(0.8, t, 10), 0.25);
  EXPECT_DOUBLE_EQ(failure_rate(0.0, t, 10), 0.0);
  // Reaching the threshold after the budget counts as failure.
  EXPECT_DOUBLE_EQ(failure_rate(0.8, t, 1), 0.5);
  EXPECT_THROW(failure_rate(0.8, std::vector<InteractionTrace>{}, 10), InvalidArgument);
}

TEST(Metrics, CurveCarriesForwardAndMaxIsItsMaximum)
{
  const std::vector<InteractionTrace> t = {trace("a", {1.0}), trace("b", {0.2, 0.4, 0.6})};
  const auto curve = mean_dsc_curve(t, 4);
  ASSERT_EQ(curve.size(), 4u);
  EXPECT_DOUBLE_EQ(curve[0], 0.6);
  EXPECT_DOUBLE_EQ(curve[1], 0.7);
  EXPECT_DOUBLE_EQ(curve[2], 0.8);
  EXPECT_DOUBLE_EQ(curve[3], 0.8);
  EXPECT_DOUBLE_EQ(max_dsc(t, 4), 0.8);
}

TEST(Metrics, ComputeMetricsRejectsCapBelowBudget)
{
  const std::vector<InteractionTrace> t = {trace("a", {1.0})};
  EXPECT_THROW(compute_metrics(t, 10, 5), InvalidArgument);
  const MetricsReport r = compute_metrics(t, 10, 20);
  EXPECT_EQ(r.trace_count, 1);
  EXPECT_DOUBLE_EQ(r.max_dsc, *std::max_element(r.mean_dsc_curve.begin(), r.mean_dsc_curve.end()));
}

TEST(Metrics, TraceJsonRoundTrip)
{
  InteractionTrace t = trace("img/obj", {0.5, 0.75});
  t.clicks.push_back({Point{1, 2, Label::positive}, std::nullopt, 0.5});
  t.clicks.push_back({Point{3, 4, Label::negative}, std::nullopt, 0.75});
  InteractionTrace b = trace("box", {0.6});
  b.clicks.push_back({std::nullopt, Box{0, 0, 4, 5}, 0.6});
  const std::vector<InteractionTrace> v = {t, b};
  EXPECT_EQ(traces_from_json(traces_to_json(v)), v);
}

TEST(Metrics, OracleAdaptersGiveBoundaryReports)
{
  const auto samples = synth_samples(6, 3);
  EvalOptions opt;
  OracleAdapter perfect(OracleAdapter::Kind::perfect);
  const auto good = evaluate_dataset(perfect, samples, opt);
  EXPECT_DOUBLE_EQ(good.report.fr90, 0.0);
  EXPECT_DOUBLE_EQ(good.report.noc90, 1.0);
  EXPECT_DOUBLE_EQ(good.report.max_dsc, 1.0);
  OracleAdapter empty(OracleAdapter::Kind::empty);
  const auto bad = evaluate_dataset(empty, samples, opt);
  EXPECT_DOUBLE_EQ(bad.report.fr80, 1.0);
  EXPECT_DOUBLE_EQ(bad.report.noc80, 20.0);
  EXPECT_DOUBLE_EQ(bad.report.max_dsc, 0.0);
}

TEST(Metrics, EvaluationIsDeterministicAcrossWorkerCounts)
{
  const auto samples = synth_samples(6, 3);
  auto model = std::make_shared<const PromptableModel>(tiny_model_config());
  PromptableModelAdapter adapter(model, "tiny");
  EvalOptions opt;
  opt.budget = 4;
  opt.cap = 8;
  const auto a = evaluate_dataset(adapter, samples, opt);
  opt.workers = 3;
  const auto b = evaluate_dataset(adapter, samples, opt);
  EXPECT_EQ(a.traces, b.traces);
  EXPECT_EQ(a.report, b.report);
}

namespace {

/// Adapter that fails on one image.
class FlakyAdapter : public ModelAdapter {
public:
  std::string name() const override { return "flaky"; }
  void set_image(const ImageGrid &, const std::string &id, const BinaryMask &gt) override
  {
    id_ = id;
    gt_ = gt;
  }
  BinaryMask predict(const PromptSet &) override
  {
    if (id_ == "img1/obj0") {
      throw std::runtime_error("model crashed");
    }
    return gt_;
  }
  std::unique_ptr<ModelAdapter> clone() const override { return std::make_unique<FlakyAdapter>(); }

private:
  std::string id_;
  BinaryMask gt_;
};

} // namespace

TEST(Metrics, FailedImagesAreExcludedAndCounted)
{
  const auto samples = synth_samples(3, 3);
  FlakyAdapter flaky;
  const auto r = evaluate_dataset(flaky, samples, EvalOptions{});
  EXPECT_EQ(r.report.failed_images, 1);
  ASSERT_EQ(r.report.failed_ids.size(), 1u);
  EXPECT_EQ(r.report.failed_ids[0], "img1/obj0");
  EXPECT_EQ(r.report.trace_count, static_cast<int>(samples.size()) - 1);
}

TEST(Metrics, BoxStartWithRgbAdapter)
{
  const auto samples = synth_samples(3, 3);
  int calls = 0;
  RgbFunctionAdapter rgb("rgb", [&](const RgbImage &img, const PromptSet &p) {
    ++calls;
    EXPECT_EQ(img[0], img[1]);
    EXPECT_TRUE(p.box.has_value());
    return BinaryMask(img[0].height(), img[0].width());
  });
  EvalOptions opt;
  opt.start = StartMode::box;
  opt.budget = 2;
  const auto r = evaluate_dataset(rgb, samples, opt);
  EXPECT_EQ(r.report.start_mode, "box");
  EXPECT_GT(calls, 0);
}

TEST(Metrics, WritesReportFiles)
{
  const auto dir = temp_dir("metrics_out");
  const auto samples = synth_samples(2, 3);
  OracleAdapter perfect(OracleAdapter::Kind::perfect);
  EvalOptions opt;
  opt.dataset_id = "toy";
  write_eval_outputs(evaluate_dataset(perfect, samples, opt), dir);
  for (const char *f : {"report.json", "traces.json", "curves.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
}
