#include <gtest/gtest.h>

#include <thread>

#include "promptseg/image_io.hpp"
#include "promptseg/rle.hpp"
#include "promptseg/service.hpp"
#include "test_support.hpp"

// After Eigen: resolv.h defines a _res macro.
#include <httplib.h>

using namespace promptseg;
using namespace promptseg::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int status_of(const std::function<void()> &f)
{
  try {
    f();
  } catch (const ServiceError &e) {
    return e.status();
  }
  return 0;
}

std::string png_bytes(const ImageGrid &img)
{
  const auto b = encode_png(to_gray(img));
  return std::string(b.begin(), b.end());
}

std::shared_ptr<const PromptableModel> tiny_model()
{
  static const auto m = std::make_shared<const PromptableModel>(tiny_model_config(8));
  return m;
}

std::unique_ptr<ModelAdapter> tiny_adapter()
{
  return std::make_unique<PromptableModelAdapter>(tiny_model(), "tiny");
}

} // namespace

TEST(Rle, RoundTripAndRowSplitting)
{
  BinaryMask m(3, 4);
  // Row 0 ends and row 1 starts with foreground: two runs, not one.
  m(0, 2) = m(0, 3) = m(1, 0) = m(1, 1) = 1;
  m(2, 3) = 1;
  const Runs runs = encode_rle(m);
  EXPECT_EQ(runs, (Runs{{2, 2}, {4, 2}, {11, 1}}));
  EXPECT_EQ(decode_rle(runs, 3, 4), m);
  EXPECT_EQ(rle_from_json(rle_to_json(m)), m);
  EXPECT_TRUE(encode_rle(BinaryMask(2, 2)).empty());

  std::mt19937_64 rng(3);
  for (int k = 0; k < 50; ++k) {
    const ag::Matrix r = random_binary(7, 9, rng);
    BinaryMask b(7, 9);
    for (int y = 0; y < 7; ++y) {
      for (int x = 0; x < 9; ++x) {
        b(y, x) = r(y, x) > 0.5;
      }
    }
    EXPECT_EQ(decode_rle(encode_rle(b), 7, 9), b);
  }
}

TEST(Rle, DecodeRejectsMalformedRuns)
{
  EXPECT_THROW(decode_rle({{10, 3}}, 3, 4), InvalidArgument);        // past the end
  EXPECT_THROW(decode_rle({{2, 4}}, 3, 4), InvalidArgument);         // crosses a row
  EXPECT_THROW(decode_rle({{4, 1}, {1, 1}}, 3, 4), InvalidArgument); // unsorted
  EXPECT_THROW(decode_rle({{0, 2}, {1, 1}}, 3, 4), InvalidArgument); // overlapping
  EXPECT_THROW(decode_rle({{0, 1}, {1, 1}}, 3, 4), InvalidArgument); // not maximal
  EXPECT_THROW(decode_rle({{0, 0}}, 3, 4), InvalidArgument);
  EXPECT_THROW(decode_rle({{-1, 1}}, 3, 4), InvalidArgument);
  // Touching across a row boundary is how the encoder splits runs.
  EXPECT_NO_THROW(decode_rle({{2, 2}, {4, 1}}, 3, 4));
  EXPECT_THROW(rle_from_json(json{{"format", "bitmap"}}), InvalidArgument);
}

TEST(Service, SessionsAreIsolated)
{
  AnnotationService svc(tiny_adapter());
  const ImageGrid img = synth_samples(1, 1)[0].image;
  const std::string a = svc.create_from_png(png_bytes(img))["session_id"];
  const std::string b = svc.create_from_png(png_bytes(img))["session_id"];
  EXPECT_NE(a, b);
  EXPECT_EQ(a.size(), 16u);
  svc.add_click(a, 5, 6, Label::positive);
  svc.add_click(a, 20, 21, Label::negative);
  EXPECT_TRUE(svc.snapshot(b).first.empty());
  EXPECT_FALSE(svc.snapshot(b).second.has_value());
  EXPECT_EQ(svc.snapshot(a).first.points.size(), 2u);
  EXPECT_EQ(svc.session_count(), 2u);
}

TEST(Service, MaskEqualsFreshPredictionAndUndoIsExact)
{
  AnnotationService svc(tiny_adapter());
  const ImageGrid img = to_image(to_gray(synth_samples(1, 2)[0].image));
  const std::string id = svc.create_from_png(png_bytes(img))["session_id"];

  PromptableModelAdapter fresh(tiny_model(), "fresh");
  fresh.set_image(img, "x", BinaryMask(img.height(), img.width()));

  const json r1 = svc.add_click(id, 10, 12, Label::positive);
  const auto snap1 = svc.snapshot(id);
  EXPECT_EQ(*snap1.second, fresh.predict(snap1.first));
  EXPECT_EQ(rle_from_json(r1["mask"]), *snap1.second);
  EXPECT_EQ(r1["prompt_count"], 1);

  svc.set_box(id, Box{4, 4, 24, 26});
  svc.add_click(id, 3, 30, Label::negative);
  const auto snap3 = svc.snapshot(id);
  EXPECT_EQ(*snap3.second, fresh.predict(snap3.first));

  svc.undo(id);
  const json r = svc.undo(id);
  const auto back = svc.snapshot(id);
  EXPECT_EQ(back.first, snap1.first);
  EXPECT_EQ(back.second, snap1.second);
  EXPECT_EQ(r["prompt_count"], 1);
  EXPECT_EQ(encode_png(mask_to_gray(*back.second)), encode_png(mask_to_gray(*snap1.second)));

  const json empty = svc.undo(id);
  EXPECT_TRUE(empty["mask"].is_null());
  EXPECT_EQ(status_of([&] { svc.undo(id); }), 409);
  EXPECT_EQ(status_of([&] { svc.get_mask_rle(id); }), 409);
}

TEST(Service, ErrorStatuses)
{
  AnnotationService svc(tiny_adapter());
  EXPECT_EQ(status_of([&] { svc.create_from_png("not a png"); }), 415);
  const std::string id =
      svc.create_from_png(png_bytes(synth_samples(1, 1)[0].image))["session_id"];
  EXPECT_EQ(status_of([&] { svc.add_click(id, 32, 0, Label::positive); }), 422);
  EXPECT_EQ(status_of([&] { svc.add_click(id, -1, 0, Label::positive); }), 422);
  EXPECT_EQ(status_of([&] { svc.set_box(id, Box{5, 5, 5, 9}); }), 422);
  EXPECT_EQ(status_of([&] { svc.set_box(id, Box{0, 0, 33, 9}); }), 422);
  EXPECT_EQ(status_of([&] { svc.add_click("0000000000000000", 1, 1, Label::positive); }), 404);
  EXPECT_EQ(status_of([&] { svc.advance(id); }), 409);
  EXPECT_EQ(status_of([&] { svc.export_session(id); }), 409);
  EXPECT_EQ(status_of([&] { svc.create_from_reference({{"record", "img00000"}, {"object", "obj0"}}); }),
            409);
  EXPECT_EQ(status_of([&] { svc.create_from_reference({{"object", "obj0"}}); }), 400);
  EXPECT_EQ(status_of([&] { svc.get_mask_png(id); }), 409);
}

TEST(Service, IdleSessionsExpire)
{
  ServiceConfig cfg;
  cfg.idle_timeout = std::chrono::seconds(60);
  AnnotationService svc(tiny_adapter(), cfg);
  const std::string png = png_bytes(synth_samples(1, 1)[0].image);
  const std::string old_id = svc.create_from_png(png)["session_id"];
  const auto t0 = AnnotationService::Clock::now();
  EXPECT_EQ(svc.expire_idle(t0 + std::chrono::seconds(30)), 0u);
  EXPECT_EQ(svc.expire_idle(t0 + std::chrono::seconds(61)), 1u);
  EXPECT_EQ(svc.session_count(), 0u);
  EXPECT_EQ(status_of([&] { svc.snapshot(old_id); }), 404);
}

TEST(Service, ManifestSessionsReportDsc)
{
  const auto dir = temp_dir("svc_manifest");
  SynthConfig sc;
  sc.max_objects = 1;
  const DatasetManifest m = generate_dataset(sc, 2, dir);
  AnnotationService svc(std::make_unique<OracleAdapter>(OracleAdapter::Kind::perfect), {}, m);
  const json created = svc.create_from_reference({{"record", "img00001"}, {"object", "obj0"}});
  EXPECT_TRUE(created["has_gt"].get<bool>());
  const json r = svc.add_click(created["session_id"], 3, 3, Label::positive);
  EXPECT_EQ(r["dsc"].get<double>(), 1.0);
  EXPECT_EQ(status_of([&] { svc.create_from_reference({{"record", "zzz"}, {"object", "obj0"}}); }),
            404);
  EXPECT_EQ(status_of([&] { svc.create_from_reference({{"record", "img00000"}, {"object", "objX"}}); }),
            404);
}

TEST(Service, AdvanceAndExportOnCineLoop)
{
  const auto dir = temp_dir("svc_cine");
  CineConfig cc;
  cc.frames = 3;
  std::vector<CineLoop> loops = {generate_cine_loop(cc, 0)};
  const std::string loop_id = loops[0].id;
  const int last = loops[0].frame_count() - 1;
  ServiceConfig cfg;
  cfg.export_dir = dir;
  AnnotationService svc(std::make_unique<OracleAdapter>(OracleAdapter::Kind::perfect), cfg,
                        std::nullopt, std::move(loops));
  const json created = svc.create_from_reference({{"loop", loop_id}, {"object", "LV"}});
  const std::string id = created["session_id"];
  EXPECT_EQ(created["frame_count"], 3);
  EXPECT_EQ(status_of([&] { svc.advance(id); }), 409); // no mask yet
  svc.add_click(id, 30, 30, Label::positive);
  const json e0 = svc.export_session(id);
  EXPECT_TRUE(fs::exists(dir / id / "frame_000_mask.png"));
  EXPECT_TRUE(fs::exists(dir / id / "frame_000_prompts.json"));
  EXPECT_EQ(e0["prompt_log"]["prompts"].size(), 1u);

  for (int t = 1; t <= last; ++t) {
    const json a = svc.advance(id);
    EXPECT_EQ(a["frame_index"], t);
    EXPECT_EQ(a["prompt_count"], 0);
    EXPECT_FALSE(a["mask"].is_null());
    EXPECT_EQ(a["tracked_dsc"].get<double>(), a["dsc"].get<double>());
    EXPECT_EQ(a["needs_intervention"].get<bool>(), a["tracked_dsc"].get<double>() < 0.9);
  }
  EXPECT_EQ(status_of([&] { svc.advance(id); }), 409);
  const json e = svc.export_session(id);
  EXPECT_EQ(e["prompt_log"]["previous_frames"].size(), static_cast<size_t>(last));
  EXPECT_TRUE(fs::exists(dir / id / "frame_002_mask.png"));
}

TEST(Service, HttpEndpoints)
{
  AnnotationService svc(tiny_adapter());
  const int port = svc.bind_port("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  std::thread server([&] { svc.listen_after_bind(); });
  struct Stopper {
    AnnotationService &svc;
    std::thread &t;
    ~Stopper()
    {
      svc.stop();
      t.join();
    }
  } stopper{svc, server};
  httplib::Client cli("127.0.0.1", port);

  auto health = cli.Get("/api/v1/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);

  EXPECT_EQ(cli.Post("/api/v1/sessions", "hello", "text/plain")->status, 415);
  const std::string png = png_bytes(synth_samples(1, 1)[0].image);
  auto created = cli.Post("/api/v1/sessions", png, "image/png");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  const std::string id = json::parse(created->body)["session_id"];
  const std::string base = "/api/v1/sessions/" + id;

  EXPECT_EQ(cli.Get(base + "/mask")->status, 409);
  EXPECT_EQ(cli.Post(base + "/clicks", "{", "application/json")->status, 400);
  EXPECT_EQ(cli.Post(base + "/clicks", R"({"x":1,"y":1,"label":"maybe"})", "application/json")
                ->status,
            400);
  EXPECT_EQ(cli.Post(base + "/clicks", R"({"x":1})", "application/json")->status, 400);
  EXPECT_EQ(cli.Post(base + "/clicks", R"({"x":99,"y":1,"label":"positive"})", "application/json")
                ->status,
            422);
  auto click = cli.Post(base + "/clicks", R"({"x":8,"y":9,"label":"positive"})", "application/json");
  ASSERT_EQ(click->status, 200);
  const json body = json::parse(click->body);
  EXPECT_EQ(body["prompt_count"], 1);
  EXPECT_EQ(body["mask"]["format"], "rle");

  auto mask = cli.Get(base + "/mask");
  EXPECT_EQ(json::parse(mask->body)["mask"], body["mask"]);
  auto pngmask = cli.Get(base + "/mask?format=png");
  EXPECT_EQ(pngmask->status, 200);
  EXPECT_EQ(pngmask->get_header_value("Content-Type"), "image/png");
  const auto raw = std::vector<std::uint8_t>(pngmask->body.begin(), pngmask->body.end());
  EXPECT_EQ(mask_from_gray(decode_png(raw)), rle_from_json(body["mask"]));
  EXPECT_EQ(cli.Get(base + "/mask?format=gif")->status, 415);

  EXPECT_EQ(cli.Post(base + "/box", R"({"x0":2,"y0":2,"x1":20,"y1":20})", "application/json")
                ->status,
            200);
  EXPECT_EQ(cli.Post(base + "/undo", "", "application/json")->status, 200);
  EXPECT_EQ(cli.Post(base + "/advance", "", "application/json")->status, 409);
  EXPECT_EQ(cli.Post("/api/v1/sessions/abcdef0123456789/undo", "", "application/json")->status,
            404);
}
