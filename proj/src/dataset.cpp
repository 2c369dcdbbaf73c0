#include "promptseg/dataset.hpp"

#include <cstdio>

#include <json.hpp>

#include "promptseg/image_io.hpp"

namespace promptseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_name(int index)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%03d.png", index);
  return buf;
}

json parse_json_file(const fs::path &path)
{
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error &e) {
    throw DataError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
}

template <typename T>
T field(const json &j, const char *key, const std::string &where)
{
  if (!j.contains(key)) {
    throw DataError(where + ": missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception &) {
    throw DataError(where + ": field '" + key + "' has the wrong type");
  }
}

} // namespace

DatasetManifest load_manifest(const fs::path &path, bool check_files)
{
  if (!fs::exists(path)) {
    throw DataError("manifest not found: " + path.string());
  }
  const json j = parse_json_file(path);
  DatasetManifest m;
  m.root = path.parent_path();
  const std::string where = path.string();
  m.dataset_id = j.value("dataset_id", std::string{});
  m.provenance = j.value("provenance", std::string{});
  if (!j.contains("records") || !j["records"].is_array() || j["records"].empty()) {
    throw DataError(where + ": no records");
  }
  for (const auto &rj : j["records"]) {
    ManifestRecord rec;
    rec.id = field<std::string>(rj, "id", where + ": record");
    const std::string rwhere = where + ": record '" + rec.id + "'";
    rec.image = field<std::string>(rj, "image", rwhere);
    rec.split = rj.value("split", std::string("train"));
    if (!rj.contains("masks") || !rj["masks"].is_array() || rj["masks"].empty()) {
      throw DataError(rwhere + ": no masks");
    }
    for (const auto &mj : rj["masks"]) {
      rec.masks.push_back({field<std::string>(mj, "object_id", rwhere),
                           field<std::string>(mj, "path", rwhere)});
    }
    m.records.push_back(std::move(rec));
  }
  if (check_files) {
    for (const auto &rec : m.records) {
      const std::string rwhere = "record '" + rec.id + "'";
      const fs::path image_path = m.resolve(rec.image);
      if (!fs::exists(image_path)) {
        throw DataError(rwhere + ": image file missing: " + image_path.string());
      }
      const GrayImage image = read_png(image_path);
      for (const auto &mr : rec.masks) {
        const fs::path mask_path = m.resolve(mr.path);
        if (!fs::exists(mask_path)) {
          throw DataError(rwhere + ": mask file missing: " + mask_path.string());
        }
        const GrayImage mask = read_png(mask_path);
        if (!mask.same_shape(image)) {
          throw DataError(rwhere + ": mask " + mr.path + " is " + std::to_string(mask.height()) +
                          "x" + std::to_string(mask.width()) + " but the image is " +
                          std::to_string(image.height()) + "x" + std::to_string(image.width()));
        }
      }
    }
  }
  return m;
}

void save_manifest(const DatasetManifest &manifest, const fs::path &path)
{
  json j;
  j["dataset_id"] = manifest.dataset_id;
  j["provenance"] = manifest.provenance;
  j["records"] = json::array();
  for (const auto &rec : manifest.records) {
    json rj;
    rj["id"] = rec.id;
    rj["image"] = rec.image;
    rj["split"] = rec.split;
    rj["masks"] = json::array();
    for (const auto &mr : rec.masks) {
      rj["masks"].push_back({{"object_id", mr.object_id}, {"path", mr.path}});
    }
    j["records"].push_back(rj);
  }
  write_text_atomic(path, j.dump(2) + "\n");
}

std::vector<Sample> load_samples(const DatasetManifest &manifest, const std::string &split)
{
  std::vector<Sample> out;
  for (const auto &rec : manifest.records) {
    if (!split.empty() && rec.split != split) {
      continue;
    }
    const ImageGrid image = read_image(manifest.resolve(rec.image));
    for (const auto &mr : rec.masks) {
      BinaryMask gt = read_mask(manifest.resolve(mr.path));
      if (!gt.same_shape(image)) {
        throw DataError("record '" + rec.id + "': mask " + mr.path +
                        " does not match the image dimensions");
      }
      out.push_back({rec.id + "/" + mr.object_id, image, std::move(gt)});
    }
  }
  return out;
}

void CineLoop::validate() const
{
  if (frames.empty()) {
    throw InvalidArgument("cine loop '" + id + "' has no frames");
  }
  for (size_t t = 0; t < frames.size(); ++t) {
    if (!frames[t].same_shape(frames[0])) {
      throw ShapeError("cine loop '" + id + "': frame " + std::to_string(t) +
                       " differs in size from frame 0");
    }
  }
  for (const auto &[name, masks] : objects) {
    if (masks.size() != frames.size()) {
      throw InvalidArgument("cine loop '" + id + "': object '" + name + "' has " +
                            std::to_string(masks.size()) + " masks for " +
                            std::to_string(frames.size()) + " frames");
    }
    for (size_t t = 0; t < masks.size(); ++t) {
      if (!masks[t].same_shape(frames[0])) {
        throw ShapeError("cine loop '" + id + "': mask of '" + name + "' at frame " +
                         std::to_string(t) + " differs in size from the frames");
      }
    }
  }
}

void save_cine_loop(const CineLoop &loop, const fs::path &dir)
{
  loop.validate();
  json j;
  j["id"] = loop.id;
  j["view"] = loop.view;
  j["frame_count"] = loop.frame_count();
  j["objects"] = json::array();
  for (int t = 0; t < loop.frame_count(); ++t) {
    write_image(loop.frames[static_cast<size_t>(t)], dir / "frames" / frame_name(t));
  }
  for (const auto &[name, masks] : loop.objects) {
    j["objects"].push_back(name);
    for (int t = 0; t < loop.frame_count(); ++t) {
      write_mask(masks[static_cast<size_t>(t)], dir / "masks" / name / frame_name(t));
    }
  }
  write_text_atomic(dir / "loop.json", j.dump(2) + "\n");
}

CineLoop load_cine_loop(const fs::path &dir)
{
  const fs::path meta = dir / "loop.json";
  if (!fs::exists(meta)) {
    throw DataError("cine loop metadata not found: " + meta.string());
  }
  const json j = parse_json_file(meta);
  CineLoop loop;
  loop.id = j.value("id", dir.filename().string());
  loop.view = j.value("view", std::string{});
  const int n = field<int>(j, "frame_count", meta.string());
  for (int t = 0; t < n; ++t) {
    loop.frames.push_back(read_image(dir / "frames" / frame_name(t)));
  }
  for (const auto &name : field<std::vector<std::string>>(j, "objects", meta.string())) {
    auto &masks = loop.objects[name];
    for (int t = 0; t < n; ++t) {
      masks.push_back(read_mask(dir / "masks" / name / frame_name(t)));
    }
  }
  try {
    loop.validate();
  } catch (const InvalidArgument &e) {
    throw DataError(e.what());
  }
  return loop;
}

void save_loop_index(const std::vector<std::string> &loop_dirs, const fs::path &dir)
{
  json j;
  j["loops"] = loop_dirs;
  write_text_atomic(dir / "loops.json", j.dump(2) + "\n");
}

std::vector<CineLoop> load_loops(const fs::path &index_or_dir)
{
  fs::path index = index_or_dir;
  if (fs::is_directory(index)) {
    if (fs::exists(index / "loop.json")) {
      return {load_cine_loop(index)};
    }
    index /= "loops.json";
  }
  if (!fs::exists(index)) {
    throw DataError("loop index not found: " + index.string());
  }
  const json j = parse_json_file(index);
  const auto dirs = field<std::vector<std::string>>(j, "loops", index.string());
  if (dirs.empty()) {
    throw DataError(index.string() + ": no loops");
  }
  std::vector<CineLoop> out;
  for (const auto &d : dirs) {
    out.push_back(load_cine_loop(index.parent_path() / d));
  }
  return out;
}

} // namespace promptseg
