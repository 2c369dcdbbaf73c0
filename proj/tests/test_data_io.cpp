#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include <png.h>

#include "promptseg/archive.hpp"
#include "promptseg/checkpoint.hpp"
#include "promptseg/config_io.hpp"
#include "promptseg/image_io.hpp"
#include "promptseg/synth.hpp"
#include "test_support.hpp"

using namespace promptseg;
using namespace promptseg::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::uint8_t> rgb_png(int h, int w)
{
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> pixels(static_cast<size_t>(h * w * 3), 128);
  png_alloc_size_t size = 0;
  png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr);
  std::vector<std::uint8_t> out(size);
  EXPECT_TRUE(png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr));
  out.resize(size);
  return out;
}

void write_json(const fs::path &p, const json &j)
{
  fs::create_directories(p.parent_path());
  std::ofstream(p) << j.dump(2);
}

std::string data_error(const std::function<void()> &f)
{
  try {
    f();
  } catch (const DataError &e) {
    return e.what();
  }
  return "<no DataError>";
}

} // namespace

TEST(ImageIo, PngRoundTrip)
{
  GrayImage g(5, 7);
  for (size_t i = 0; i < g.size(); ++i) {
    g[i] = static_cast<std::uint8_t>(i * 7);
  }
  EXPECT_EQ(decode_png(encode_png(g)), g);
  const auto dir = temp_dir("png");
  write_png(g, dir / "sub" / "a.png");
  EXPECT_EQ(read_png(dir / "sub" / "a.png"), g);

  const BinaryMask m = rect_mask(6, 6, 1, 1, 4, 5);
  write_mask(m, dir / "m.png");
  EXPECT_EQ(read_mask(dir / "m.png"), m);
  EXPECT_EQ(to_gray(to_image(g)), g);
}

TEST(ImageIo, RejectsMultiChannelAndGarbage)
{
  const auto rgb = rgb_png(4, 4);
  EXPECT_NE(data_error([&] { decode_png(rgb, "rgb.png"); }).find("single-channel"),
            std::string::npos);
  const std::vector<std::uint8_t> junk = {1, 2, 3, 4};
  EXPECT_THROW(decode_png(junk), DataError);
  EXPECT_THROW(read_png("/nonexistent/x.png"), DataError);
}

TEST(Dataset, GeneratedManifestLoads)
{
  const auto dir = temp_dir("manifest_ok");
  SynthConfig c;
  c.rng_seed = 4;
  const DatasetManifest m = generate_dataset(c, 3, dir, "val");
  const DatasetManifest back = load_manifest(dir / "manifest.json");
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.records.size(), 3u);
  EXPECT_EQ(back.records[0].id, "img00000");
  const auto samples = load_samples(back, "val");
  EXPECT_FALSE(samples.empty());
  EXPECT_TRUE(load_samples(back, "train").empty());
  for (const auto &s : samples) {
    EXPECT_TRUE(s.image.same_shape(s.gt));
  }
}

TEST(Dataset, ManifestErrorsNameTheRecord)
{
  const auto dir = temp_dir("manifest_bad");
  SynthConfig c;
  c.max_objects = 1;
  generate_dataset(c, 2, dir);
  json j = json::parse(read_text(dir / "manifest.json"));

  EXPECT_NE(data_error([&] { load_manifest(dir / "missing.json"); }).find("not found"),
            std::string::npos);

  {
    std::ofstream(dir / "broken.json") << "{ not json";
    EXPECT_NE(data_error([&] { load_manifest(dir / "broken.json"); }).find("malformed"),
              std::string::npos);
  }
  {
    json k = j;
    k["records"][1]["image"] = "images/nope.png";
    write_json(dir / "k1.json", k);
    const std::string e = data_error([&] { load_manifest(dir / "k1.json"); });
    EXPECT_NE(e.find("img00001"), std::string::npos) << e;
    EXPECT_NE(e.find("image file missing"), std::string::npos) << e;
  }
  {
    json k = j;
    k["records"][0].erase("masks");
    write_json(dir / "k2.json", k);
    EXPECT_NE(data_error([&] { load_manifest(dir / "k2.json"); }).find("masks"),
              std::string::npos);
  }
  {
    // Mask of the wrong size.
    write_mask(BinaryMask(8, 8), dir / "masks" / "small.png");
    json k = j;
    k["records"][0]["masks"][0]["path"] = "masks/small.png";
    write_json(dir / "k3.json", k);
    const std::string e = data_error([&] { load_manifest(dir / "k3.json"); });
    EXPECT_NE(e.find("img00000"), std::string::npos) << e;
  }
  {
    json k = j;
    k["records"] = json::array();
    write_json(dir / "k4.json", k);
    EXPECT_NE(data_error([&] { load_manifest(dir / "k4.json"); }).find("no records"),
              std::string::npos);
  }
}

TEST(Synth, GenerationIsAPureFunctionOfConfigAndIndex)
{
  SynthConfig c;
  c.rng_seed = 9;
  const SynthSample a = generate_sample(c, 3);
  const SynthSample b = generate_sample(c, 3);
  EXPECT_EQ(a.image, b.image);
  ASSERT_EQ(a.objects.size(), b.objects.size());
  for (size_t i = 0; i < a.objects.size(); ++i) {
    EXPECT_EQ(a.objects[i].mask, b.objects[i].mask);
    EXPECT_GE(count_foreground(a.objects[i].mask), static_cast<size_t>(c.min_area));
  }
  EXPECT_NE(generate_sample(c, 4).image, a.image);
  c.rng_seed = 10;
  EXPECT_NE(generate_sample(c, 3).image, a.image);
}

TEST(Synth, ConeRestrictsObjects)
{
  SynthConfig c;
  c.cone = true;
  const BinaryMask cone = cone_mask(c);
  for (std::uint64_t i = 0; i < 5; ++i) {
    for (const auto &o : generate_sample(c, i).objects) {
      for (size_t p = 0; p < o.mask.size(); ++p) {
        if (o.mask[p]) {
          EXPECT_TRUE(cone[p]);
        }
      }
    }
  }
}

TEST(Synth, ConfigValidation)
{
  SynthConfig c;
  c.min_area = 10;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.shape = "triangle";
  EXPECT_THROW(c.validate(), ConfigError);
  CineConfig k;
  k.motion = "spin";
  EXPECT_THROW(k.validate(), ConfigError);
}

TEST(Cine, SaveLoadRoundTrip)
{
  const auto dir = temp_dir("cine_io");
  CineConfig c;
  c.frames = 4;
  c.rng_seed = 2;
  const auto loops = generate_cine_dataset(c, 2, dir);
  const auto back = load_loops(dir);
  ASSERT_EQ(back.size(), 2u);
  for (size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].id, loops[i].id);
    EXPECT_EQ(back[i].view, loops[i].view);
    EXPECT_EQ(back[i].objects, loops[i].objects);
    for (int t = 0; t < 4; ++t) {
      EXPECT_EQ(to_gray(back[i].frames[t]), to_gray(loops[i].frames[t]));
    }
  }
  EXPECT_EQ(loops[0].objects.count("LV"), 1u);
  EXPECT_EQ(loops[0].objects.count("LA"), 1u);
  EXPECT_THROW(load_loops(dir / "nothing"), DataError);
}

TEST(Archive, ZipRoundTripAndCorruption)
{
  const std::vector<std::pair<std::string, Bytes>> entries = {
      {"a.txt", {'h', 'i'}}, {"dir/b.bin", Bytes(1000, 7)}, {"empty", {}}};
  Bytes zip = write_zip(entries);
  const auto back = read_zip(zip, "mem");
  ASSERT_EQ(back.size(), 3u);
  for (const auto &[name, bytes] : entries) {
    EXPECT_EQ(back.at(name), bytes) << name;
  }
  EXPECT_THROW(read_zip(Bytes{1, 2, 3}, "mem"), DataError);
  // Flip a payload byte: the CRC check catches it.
  Bytes bad = zip;
  const auto pos = std::search(bad.begin(), bad.end(), entries[0].second.begin(),
                               entries[0].second.end());
  ASSERT_NE(pos, bad.end());
  *pos ^= 0xff;
  EXPECT_NE(data_error([&] { read_zip(bad, "mem"); }).find("CRC"), std::string::npos);
}

TEST(Archive, NpyRoundTrip)
{
  std::mt19937_64 rng(1);
  const ag::Matrix m = random_matrix(3, 5, rng);
  EXPECT_EQ(decode_npy(encode_npy(m), "m"), m);
  Bytes b = encode_npy(m);
  b.resize(b.size() - 8);
  EXPECT_THROW(decode_npy(b, "m"), DataError);
}

TEST(Checkpoint, RoundTripPreservesEverything)
{
  const auto dir = temp_dir("ckpt");
  PromptableModel m(tiny_model_config(21));
  save_checkpoint(m, dir / "m.ckpt", {{"note", "x"}});
  const LoadedCheckpoint c = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(c.model.config(), m.config());
  EXPECT_EQ(c.model.params().checksum(), m.params().checksum());
  EXPECT_EQ(c.manifest["provenance"]["note"], "x");
  EXPECT_EQ(c.manifest["partition"]["total"].get<size_t>(), m.parameter_partition().total());
  EXPECT_THROW(load_checkpoint(dir / "none.ckpt"), DataError);
  std::ofstream(dir / "junk.ckpt") << "junk";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), DataError);
}

TEST(ConfigIo, RoundTripsAndStrictness)
{
  ModelConfig mc = tiny_model_config();
  ModelConfig mback;
  update_from_json(mback, to_json(mc), "model");
  EXPECT_EQ(mback, mc);

  SynthConfig sc;
  sc.cone = true;
  sc.rng_seed = 77;
  SynthConfig sback;
  update_from_json(sback, to_json(sc), "synth");
  EXPECT_EQ(sback, sc);

  LossConfig lc;
  EXPECT_THROW(update_from_json(lc, {{"gama", 2.0}}, "loss"), ConfigError);
  EXPECT_THROW(update_from_json(lc, {{"alpha", "half"}}, "loss"), ConfigError);
  try {
    update_from_json(mc, {{"bogus", 1}}, "model");
    FAIL();
  } catch (const ConfigError &e) {
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos) << e.what();
  }
}
