#pragma once

#include <filesystem>

#include <json.hpp>

#include "promptseg/model.hpp"

namespace promptseg {

/// Archive layout: config.json, manifest.json (partition counts, init seed, parameter
/// list, provenance) and params/<name>.npy for every parameter.
void save_checkpoint(const PromptableModel &model, const std::filesystem::path &path,
                     const nlohmann::json &provenance = nlohmann::json::object());

struct LoadedCheckpoint {
  PromptableModel model;
  nlohmann::json manifest;
};

/// Throws DataError for a missing, corrupt or incomplete archive.
LoadedCheckpoint load_checkpoint(const std::filesystem::path &path);

} // namespace promptseg
