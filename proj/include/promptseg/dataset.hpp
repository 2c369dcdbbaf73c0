#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "promptseg/types.hpp"

namespace promptseg {

struct MaskRef {
  std::string object_id;
  std::string path; // relative to the manifest directory
  friend bool operator==(const MaskRef &, const MaskRef &) = default;
};

struct ManifestRecord {
  std::string id;
  std::string image; // relative to the manifest directory
  std::vector<MaskRef> masks;
  std::string split = "train";
  friend bool operator==(const ManifestRecord &, const ManifestRecord &) = default;
};

struct DatasetManifest {
  std::string dataset_id;
  std::string provenance;
  std::vector<ManifestRecord> records;
  /// Directory the relative paths resolve against; not serialized.
  std::filesystem::path root;

  std::filesystem::path resolve(const std::string &relative) const { return root / relative; }
  friend bool operator==(const DatasetManifest &a, const DatasetManifest &b)
  {
    return a.dataset_id == b.dataset_id && a.provenance == b.provenance &&
           a.records == b.records;
  }
};

/// Parses and validates a manifest. Every referenced file must exist and each mask must
/// match its image's dimensions; errors name the record. Throws DataError.
DatasetManifest load_manifest(const std::filesystem::path &path, bool check_files = true);
void save_manifest(const DatasetManifest &manifest, const std::filesystem::path &path);

/// One (image, object) pair ready for training or evaluation.
struct Sample {
  std::string id; // "<record id>/<object id>"
  ImageGrid image;
  BinaryMask gt;
};

/// Loads every object of every record whose split matches (all records when empty).
std::vector<Sample> load_samples(const DatasetManifest &manifest, const std::string &split = {});

/// Ordered frames with per-object masks.
struct CineLoop {
  std::string id;
  std::string view;
  std::vector<ImageGrid> frames;
  std::map<std::string, std::vector<BinaryMask>> objects;

  int frame_count() const { return static_cast<int>(frames.size()); }
  /// Throws ShapeError/InvalidArgument when frames or masks disagree.
  void validate() const;
};

/// Layout: <dir>/loop.json, <dir>/frames/NNN.png, <dir>/masks/<object>/NNN.png.
void save_cine_loop(const CineLoop &loop, const std::filesystem::path &dir);
CineLoop load_cine_loop(const std::filesystem::path &dir);

/// <dir>/loops.json lists loop subdirectories.
void save_loop_index(const std::vector<std::string> &loop_dirs, const std::filesystem::path &dir);
std::vector<CineLoop> load_loops(const std::filesystem::path &index_or_dir);

} // namespace promptseg
