#include "promptseg/checkpoint.hpp"

#include "promptseg/archive.hpp"
#include "promptseg/config_io.hpp"
#include "promptseg/image_io.hpp"

namespace promptseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Bytes text_bytes(const std::string &s) { return Bytes(s.begin(), s.end()); }

json parse_entry(const std::map<std::string, Bytes> &entries, const std::string &name,
                 const std::string &source)
{
  const auto it = entries.find(name);
  if (it == entries.end()) {
    throw DataError(source + ": checkpoint has no " + name);
  }
  try {
    return json::parse(std::string(it->second.begin(), it->second.end()));
  } catch (const json::parse_error &e) {
    throw DataError(source + ": malformed " + name + " (" + e.what() + ")");
  }
}

} // namespace

void save_checkpoint(const PromptableModel &model, const fs::path &path, const json &provenance)
{
  const PartitionCounts counts = model.parameter_partition();
  json manifest;
  manifest["format"] = "promptseg-checkpoint";
  manifest["version"] = 1;
  manifest["init_seed"] = model.config().init_seed;
  manifest["partition"] = {{"image_encoder", counts.image_encoder},
                           {"prompt_encoder", counts.prompt_encoder},
                           {"mask_decoder", counts.mask_decoder},
                           {"total", counts.total()}};
  manifest["checksums"] = {
      {"image_encoder", model.params().checksum(ParamGroup::image_encoder)},
      {"prompt_encoder", model.params().checksum(ParamGroup::prompt_encoder)},
      {"mask_decoder", model.params().checksum(ParamGroup::mask_decoder)},
      {"all", model.params().checksum()}};
  manifest["provenance"] = provenance;
  json plist = json::array();
  std::vector<std::pair<std::string, Bytes>> entries;
  entries.emplace_back("config.json", text_bytes(to_json(model.config()).dump(2) + "\n"));
  for (const auto &p : model.params().all()) {
    plist.push_back({{"name", p.name},
                     {"group", to_string(p.group)},
                     {"shape", {p.var.rows(), p.var.cols()}},
                     {"trainable", p.trainable}});
  }
  manifest["parameters"] = plist;
  entries.emplace_back("manifest.json", text_bytes(manifest.dump(2) + "\n"));
  for (const auto &p : model.params().all()) {
    entries.emplace_back("params/" + p.name + ".npy", encode_npy(p.var.value()));
  }
  write_file_atomic(path, write_zip(entries));
}

LoadedCheckpoint load_checkpoint(const fs::path &path)
{
  const std::string source = path.string();
  if (!fs::exists(path)) {
    throw DataError("checkpoint not found: " + source);
  }
  const auto entries = read_zip(read_file(path), source);
  ModelConfig config;
  try {
    update_from_json(config, parse_entry(entries, "config.json", source), "config");
  } catch (const ConfigError &e) {
    throw DataError(source + ": invalid model config (" + e.what() + ")");
  }
  LoadedCheckpoint out{PromptableModel(config), parse_entry(entries, "manifest.json", source)};
  for (auto &p : out.model.params().all()) {
    const std::string name = "params/" + p.name + ".npy";
    const auto it = entries.find(name);
    if (it == entries.end()) {
      throw DataError(source + ": checkpoint is missing parameter " + p.name);
    }
    ag::Matrix value = decode_npy(it->second, source + ":" + name);
    if (value.rows() != p.var.rows() || value.cols() != p.var.cols()) {
      throw DataError(source + ": parameter " + p.name + " has shape " +
                      std::to_string(value.rows()) + "x" + std::to_string(value.cols()) +
                      ", expected " + std::to_string(p.var.rows()) + "x" +
                      std::to_string(p.var.cols()));
    }
    p.var.mutable_value() = std::move(value);
  }
  return out;
}

} // namespace promptseg
