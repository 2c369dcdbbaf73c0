#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "promptseg/dataset.hpp"
#include "promptseg/types.hpp"

namespace promptseg {

struct SynthConfig {
  int height = 64;
  int width = 64;
  int min_objects = 1;
  int max_objects = 2;
  /// ellipse | bean | mixed
  std::string shape = "mixed";
  /// hypo | hyper | anechoic | mixed
  std::string echogenicity = "mixed";
  double speckle_strength = 0.5;
  int min_semi_axis = 7;
  int max_semi_axis = 16;
  int min_area = 64;
  /// Gaussian sigma of the boundary softening, in pixels.
  double blur_sigma = 1.0;
  bool cone = false;
  /// Full opening angle of the sector.
  double cone_angle_deg = 75.0;
  /// Apex row; negative places it above the image.
  double cone_apex_y = -6.0;
  std::uint64_t rng_seed = 0;

  void validate() const;
  friend bool operator==(const SynthConfig &, const SynthConfig &) = default;
};

struct SynthObject {
  std::string id;
  std::string shape;
  std::string echogenicity;
  BinaryMask mask;
};

struct SynthSample {
  ImageGrid image;
  std::vector<SynthObject> objects;
};

/// Pixels inside the scan sector (all ones when the cone is off).
BinaryMask cone_mask(const SynthConfig &config);

/// Pure function of (config, index).
SynthSample generate_sample(const SynthConfig &config, std::uint64_t index);

/// Writes images/, masks/ and manifest.json under `out_dir` and returns the manifest.
DatasetManifest generate_dataset(const SynthConfig &config, int count,
                                 const std::filesystem::path &out_dir,
                                 const std::string &split = "train");

struct CineConfig {
  int height = 64;
  int width = 64;
  int frames = 20;
  /// cardiac: pulsating LV/LA pair; translate: whole field moves by (dx, dy) per frame.
  std::string motion = "cardiac";
  std::string view = "4-chamber";
  int dx = 1;
  int dy = 0;
  double speckle_strength = 0.4;
  /// Relative amplitude of the cardiac size change.
  double pulsation = 0.12;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

CineLoop generate_cine_loop(const CineConfig &config, std::uint64_t index);

/// Writes loop_NNN/ directories plus loops.json.
std::vector<CineLoop> generate_cine_dataset(const CineConfig &config, int count,
                                            const std::filesystem::path &out_dir);

} // namespace promptseg
