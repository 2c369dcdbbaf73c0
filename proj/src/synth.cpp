#include "promptseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "promptseg/image_io.hpp"

namespace promptseg {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

std::mt19937_64 item_rng(std::uint64_t seed, std::uint64_t index, std::uint32_t stream)
{
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    stream};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64 &rng, double lo, double hi)
{
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64 &rng, int lo, int hi)
{
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

std::vector<double> gaussian_kernel(double sigma)
{
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<size_t>(i + radius)] = v;
    sum += v;
  }
  for (double &v : k) {
    v /= sum;
  }
  return k;
}

// Separable Gaussian with clamp-to-edge borders.
ImageGrid blur(const ImageGrid &in, double sigma)
{
  if (sigma <= 0.0) {
    return in;
  }
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int h = in.height();
  const int w = in.width();
  ImageGrid tmp(h, w);
  ImageGrid out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        s += k[static_cast<size_t>(i + radius)] * in(r, std::clamp(c + i, 0, w - 1));
      }
      tmp(r, c) = s;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        s += k[static_cast<size_t>(i + radius)] * tmp(std::clamp(r + i, 0, h - 1), c);
      }
      out(r, c) = s;
    }
  }
  return out;
}

ImageGrid tissue_background(std::mt19937_64 &rng, int h, int w)
{
  ImageGrid bg(h, w, 0.45);
  for (int k = 0; k < 3; ++k) {
    const double fx = uniform(rng, -1.5, 1.5) / w;
    const double fy = uniform(rng, -1.5, 1.5) / h;
    const double phase = uniform(rng, 0.0, 2.0 * kPi);
    const double amp = uniform(rng, 0.02, 0.06);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        bg(r, c) += amp * std::cos(2.0 * kPi * (fx * c + fy * r) + phase);
      }
    }
  }
  return bg;
}

// Rayleigh magnitudes, low-pass filtered and scaled to unit mean.
ImageGrid speckle_field(std::mt19937_64 &rng, int h, int w)
{
  ImageGrid raw(h, w);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (size_t i = 0; i < raw.size(); ++i) {
    raw[i] = std::sqrt(-2.0 * std::log(1.0 - unit(rng)));
  }
  ImageGrid grain = blur(raw, 0.7);
  double mean = 0.0;
  for (double v : grain.values()) {
    mean += v;
  }
  mean /= static_cast<double>(grain.size());
  for (double &v : grain.storage()) {
    v /= mean;
  }
  return grain;
}

void apply_speckle(ImageGrid &image, const ImageGrid &grain, double strength)
{
  for (size_t i = 0; i < image.size(); ++i) {
    image[i] = std::clamp(image[i] * ((1.0 - strength) + strength * grain[i]), 0.0, 1.0);
  }
}

struct Shape {
  double cx = 0, cy = 0, a = 1, b = 1, theta = 0;
  double bean_amp = 0.0;
  int bean_k = 2;
  double bean_phase = 0.0;

  bool inside(double x, double y, double scale = 1.0) const
  {
    const double dx = x - cx;
    const double dy = y - cy;
    const double u = (dx * std::cos(theta) + dy * std::sin(theta)) / (a * scale);
    const double v = (-dx * std::sin(theta) + dy * std::cos(theta)) / (b * scale);
    const double rho = std::sqrt(u * u + v * v);
    double limit = 1.0;
    if (bean_amp > 0.0) {
      limit += bean_amp * std::sin(bean_k * std::atan2(v, u) + bean_phase);
    }
    return rho <= limit;
  }
};

BinaryMask rasterize(const Shape &s, int h, int w, double scale = 1.0)
{
  BinaryMask m(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      m(r, c) = s.inside(c, r, scale) ? 1 : 0;
    }
  }
  return m;
}

double echo_level(const std::string &mode, std::mt19937_64 &rng)
{
  if (mode == "hypo") {
    return uniform(rng, 0.16, 0.26);
  }
  if (mode == "hyper") {
    return uniform(rng, 0.78, 0.92);
  }
  return uniform(rng, 0.02, 0.06); // anechoic
}

template <typename T>
T pick(std::mt19937_64 &rng, std::initializer_list<T> options)
{
  const int i = uniform_int(rng, 0, static_cast<int>(options.size()) - 1);
  return *(options.begin() + i);
}

void check_family(const std::string &value, std::initializer_list<const char *> allowed,
                  const char *name)
{
  for (const char *a : allowed) {
    if (value == a) {
      return;
    }
  }
  std::string msg = std::string("synth.") + name + " must be one of";
  for (const char *a : allowed) {
    msg += std::string(" '") + a + "'";
  }
  throw ConfigError(msg + ", got '" + value + "'");
}

BinaryMask mask_and(const BinaryMask &a, const BinaryMask &b)
{
  BinaryMask out(a.height(), a.width());
  for (size_t i = 0; i < a.size(); ++i) {
    out[i] = (a[i] && b[i]) ? 1 : 0;
  }
  return out;
}

bool overlaps_dilated(const BinaryMask &a, const BinaryMask &b, int gap)
{
  for (int r = 0; r < a.height(); ++r) {
    for (int c = 0; c < a.width(); ++c) {
      if (!a(r, c)) {
        continue;
      }
      for (int dr = -gap; dr <= gap; ++dr) {
        for (int dc = -gap; dc <= gap; ++dc) {
          if (b.contains(r + dr, c + dc) && b(r + dr, c + dc)) {
            return true;
          }
        }
      }
    }
  }
  return false;
}

std::string indexed(const char *prefix, std::uint64_t index, int digits = 5)
{
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%0*llu", prefix, digits,
                static_cast<unsigned long long>(index));
  return buf;
}

} // namespace

void SynthConfig::validate() const
{
  if (height < 8 || width < 8) {
    throw ConfigError("synth image size must be at least 8x8");
  }
  if (min_objects < 1 || max_objects < min_objects) {
    throw ConfigError("synth object count range must satisfy 1 <= min_objects <= max_objects");
  }
  check_family(shape, {"ellipse", "bean", "mixed"}, "shape");
  check_family(echogenicity, {"hypo", "hyper", "anechoic", "mixed"}, "echogenicity");
  if (!(speckle_strength >= 0.0 && speckle_strength <= 1.0)) {
    throw ConfigError("synth.speckle_strength must lie in [0, 1]");
  }
  if (min_semi_axis < 2 || max_semi_axis < min_semi_axis) {
    throw ConfigError("synth semi-axis range must satisfy 2 <= min_semi_axis <= max_semi_axis");
  }
  if (min_area < 64) {
    throw ConfigError("synth.min_area must be >= 64");
  }
  if (kPi * max_semi_axis * max_semi_axis < min_area) {
    throw ConfigError("synth.max_semi_axis is too small to reach min_area");
  }
  if (2 * max_semi_axis + 4 > std::min(height, width)) {
    throw ConfigError("synth.max_semi_axis does not fit the image");
  }
  if (blur_sigma < 0.0 || blur_sigma > 2.0) {
    throw ConfigError("synth.blur_sigma must lie in [0, 2]");
  }
  if (cone && !(cone_angle_deg > 0.0 && cone_angle_deg < 180.0)) {
    throw ConfigError("synth.cone_angle_deg must lie in (0, 180)");
  }
}

BinaryMask cone_mask(const SynthConfig &config)
{
  BinaryMask m(config.height, config.width, 1);
  if (!config.cone) {
    return m;
  }
  const double apex_x = (config.width - 1) / 2.0;
  const double half = config.cone_angle_deg * kPi / 360.0;
  for (int r = 0; r < config.height; ++r) {
    for (int c = 0; c < config.width; ++c) {
      const double dy = r - config.cone_apex_y;
      const double dx = c - apex_x;
      m(r, c) = (dy > 0.0 && std::abs(std::atan2(dx, dy)) <= half) ? 1 : 0;
    }
  }
  return m;
}

SynthSample generate_sample(const SynthConfig &config, std::uint64_t index)
{
  config.validate();
  auto rng = item_rng(config.rng_seed, index, 0x53594e54u);
  const int h = config.height;
  const int w = config.width;
  const BinaryMask sector = cone_mask(config);

  SynthSample out;
  ImageGrid intensity = tissue_background(rng, h, w);
  BinaryMask occupied(h, w);
  const int n_objects = uniform_int(rng, config.min_objects, config.max_objects);
  for (int k = 0; k < n_objects; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      Shape s;
      s.a = uniform(rng, config.min_semi_axis, config.max_semi_axis);
      s.b = uniform(rng, config.min_semi_axis, config.max_semi_axis);
      s.theta = uniform(rng, 0.0, kPi);
      const double reach = std::max(s.a, s.b) * 1.25;
      s.cx = uniform(rng, std::min(reach, w / 2.0), std::max(w - 1 - reach, w / 2.0));
      s.cy = uniform(rng, std::min(reach, h / 2.0), std::max(h - 1 - reach, h / 2.0));
      const std::string shape =
          config.shape == "mixed" ? pick<std::string>(rng, {"ellipse", "bean"}) : config.shape;
      if (shape == "bean") {
        s.bean_amp = uniform(rng, 0.12, 0.22);
        s.bean_k = uniform_int(rng, 2, 3);
        s.bean_phase = uniform(rng, 0.0, 2.0 * kPi);
      }
      const std::string echo = config.echogenicity == "mixed"
                                   ? pick<std::string>(rng, {"hypo", "hyper", "anechoic"})
                                   : config.echogenicity;
      const double level = echo_level(echo, rng);
      const BinaryMask mask = mask_and(rasterize(s, h, w), sector);
      if (count_foreground(mask) < static_cast<size_t>(config.min_area) ||
          overlaps_dilated(mask, occupied, 2)) {
        continue;
      }
      for (size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) {
          intensity[i] = level;
          occupied[i] = 1;
        }
      }
      out.objects.push_back({indexed("obj", static_cast<std::uint64_t>(k), 1), shape, echo, mask});
      placed = true;
    }
  }
  if (out.objects.empty()) {
    throw DataError("synth: could not place any object for index " + std::to_string(index));
  }

  intensity = blur(intensity, config.blur_sigma);
  apply_speckle(intensity, speckle_field(rng, h, w), config.speckle_strength);
  for (size_t i = 0; i < intensity.size(); ++i) {
    if (!sector[i]) {
      intensity[i] = 0.0;
    }
  }
  out.image = std::move(intensity);
  return out;
}

DatasetManifest generate_dataset(const SynthConfig &config, int count, const fs::path &out_dir,
                                 const std::string &split)
{
  if (count < 1) {
    throw InvalidArgument("synthgen count must be >= 1");
  }
  config.validate();
  DatasetManifest manifest;
  manifest.dataset_id = "synth-" + split + "-seed" + std::to_string(config.rng_seed);
  manifest.provenance = "synthetic speckle phantom; shape=" + config.shape +
                        " echogenicity=" + config.echogenicity +
                        (config.cone ? " cone=on" : " cone=off");
  manifest.root = out_dir;
  for (int i = 0; i < count; ++i) {
    const auto index = static_cast<std::uint64_t>(i);
    const SynthSample sample = generate_sample(config, index);
    ManifestRecord rec;
    rec.id = indexed("img", index);
    rec.split = split;
    rec.image = "images/" + rec.id + ".png";
    write_image(sample.image, out_dir / rec.image);
    for (const auto &obj : sample.objects) {
      const std::string path = "masks/" + rec.id + "_" + obj.id + ".png";
      write_mask(obj.mask, out_dir / path);
      rec.masks.push_back({obj.id, path});
    }
    manifest.records.push_back(std::move(rec));
  }
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

void CineConfig::validate() const
{
  if (height < 32 || width < 32) {
    throw ConfigError("cine frame size must be at least 32x32");
  }
  if (frames < 1) {
    throw ConfigError("cine.frames must be >= 1");
  }
  if (motion != "cardiac" && motion != "translate") {
    throw ConfigError("cine.motion must be 'cardiac' or 'translate'");
  }
  if (view != "2-chamber" && view != "4-chamber" && view != "mixed") {
    throw ConfigError("cine.view must be '2-chamber', '4-chamber' or 'mixed'");
  }
  if (!(speckle_strength >= 0.0 && speckle_strength <= 1.0)) {
    throw ConfigError("cine.speckle_strength must lie in [0, 1]");
  }
  if (!(pulsation >= 0.0 && pulsation < 0.5)) {
    throw ConfigError("cine.pulsation must lie in [0, 0.5)");
  }
}

CineLoop generate_cine_loop(const CineConfig &config, std::uint64_t index)
{
  config.validate();
  auto rng = item_rng(config.rng_seed, index, 0x43494e45u);
  CineLoop loop;
  loop.id = indexed("loop_", index, 3);
  loop.view = config.view == "mixed" ? (index % 2 == 0 ? "2-chamber" : "4-chamber")
                                     : config.view;
  const int h = config.height;
  const int w = config.width;

  if (config.motion == "translate") {
    const int steps = config.frames - 1;
    const int margin = steps * std::max(std::abs(config.dx), std::abs(config.dy)) + 1;
    const int ch = h + 2 * margin;
    const int cw = w + 2 * margin;
    Shape s;
    s.a = uniform(rng, 8.0, 12.0);
    s.b = uniform(rng, 8.0, 12.0);
    s.theta = uniform(rng, 0.0, kPi);
    // Start so the object's path stays centred in the frame.
    s.cx = margin + (w - 1) / 2.0 - steps * config.dx / 2.0;
    s.cy = margin + (h - 1) / 2.0 - steps * config.dy / 2.0;
    ImageGrid canvas = tissue_background(rng, ch, cw);
    const BinaryMask support = rasterize(s, ch, cw);
    const double level = echo_level("hypo", rng);
    for (size_t i = 0; i < support.size(); ++i) {
      if (support[i]) {
        canvas[i] = level;
      }
    }
    canvas = blur(canvas, 1.0);
    apply_speckle(canvas, speckle_field(rng, ch, cw), config.speckle_strength);
    auto &masks = loop.objects["object"];
    for (int t = 0; t < config.frames; ++t) {
      // Content moves by (dx, dy) per frame, so the window moves the other way.
      const int r0 = margin - t * config.dy;
      const int c0 = margin - t * config.dx;
      ImageGrid frame(h, w);
      BinaryMask mask(h, w);
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          frame(r, c) = canvas(r0 + r, c0 + c);
          mask(r, c) = support(r0 + r, c0 + c);
        }
      }
      loop.frames.push_back(std::move(frame));
      masks.push_back(std::move(mask));
    }
    return loop;
  }

  // Cardiac-like: LV above LA, sizes oscillating in opposite phase over one cycle.
  const bool four = loop.view == "4-chamber";
  Shape lv;
  lv.a = uniform(rng, 8.5, 10.0);
  lv.b = uniform(rng, 13.0, 15.0);
  lv.theta = four ? uniform(rng, -0.25, -0.1) : uniform(rng, -0.08, 0.08);
  lv.cx = (w - 1) / 2.0 + uniform(rng, -2.0, 2.0);
  lv.cy = h * 0.36;
  Shape la;
  la.a = uniform(rng, 8.0, 9.5);
  la.b = uniform(rng, 6.5, 7.5);
  la.theta = lv.theta * 0.5;
  la.cx = lv.cx + (four ? 2.0 : 0.0);
  la.cy = lv.cy + lv.b * (1.0 + config.pulsation) + la.b * (1.0 + config.pulsation) + 4.0;
  const double phase = uniform(rng, 0.0, 2.0 * kPi);
  const double lv_level = echo_level("anechoic", rng);
  const double la_level = echo_level("anechoic", rng);
  const ImageGrid tissue = tissue_background(rng, h, w);
  const ImageGrid grain = speckle_field(rng, h, w);
  auto &lv_masks = loop.objects["LV"];
  auto &la_masks = loop.objects["LA"];
  for (int t = 0; t < config.frames; ++t) {
    const double cycle = std::sin(2.0 * kPi * t / std::max(config.frames, 2) + phase);
    const double lv_scale = 1.0 + config.pulsation * cycle;
    const double la_scale = 1.0 - config.pulsation * cycle;
    const BinaryMask lv_mask = rasterize(lv, h, w, lv_scale);
    const BinaryMask la_mask = rasterize(la, h, w, la_scale);
    // Myocardial wall: a bright ring around the LV that is not part of either mask.
    const BinaryMask wall = rasterize(lv, h, w, lv_scale * 1.22);
    ImageGrid frame = tissue;
    for (size_t i = 0; i < frame.size(); ++i) {
      if (lv_mask[i]) {
        frame[i] = lv_level;
      } else if (la_mask[i]) {
        frame[i] = la_level;
      } else if (wall[i]) {
        frame[i] = 0.8;
      }
    }
    frame = blur(frame, 1.0);
    apply_speckle(frame, grain, config.speckle_strength);
    loop.frames.push_back(std::move(frame));
    lv_masks.push_back(lv_mask);
    la_masks.push_back(la_mask);
  }
  return loop;
}

std::vector<CineLoop> generate_cine_dataset(const CineConfig &config, int count,
                                            const fs::path &out_dir)
{
  if (count < 1) {
    throw InvalidArgument("cine loop count must be >= 1");
  }
  std::vector<CineLoop> loops;
  std::vector<std::string> dirs;
  for (int i = 0; i < count; ++i) {
    CineLoop loop = generate_cine_loop(config, static_cast<std::uint64_t>(i));
    save_cine_loop(loop, out_dir / loop.id);
    dirs.push_back(loop.id);
    loops.push_back(std::move(loop));
  }
  save_loop_index(dirs, out_dir);
  return loops;
}

} // namespace promptseg
