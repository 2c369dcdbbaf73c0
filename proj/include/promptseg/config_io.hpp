#pragma once

// JSON mapping of every configuration struct. Readers start from the defaults, accept
// partial objects and reject unknown keys or wrongly typed values with ConfigError.

#include <json.hpp>

#include "promptseg/model.hpp"
#include "promptseg/objectives.hpp"
#include "promptseg/prompting.hpp"
#include "promptseg/synth.hpp"

namespace promptseg {

nlohmann::json to_json(const ModelConfig &c);
nlohmann::json to_json(const LossConfig &c);
nlohmann::json to_json(const SamplerConfig &c);
nlohmann::json to_json(const SynthConfig &c);
nlohmann::json to_json(const CineConfig &c);

void update_from_json(ModelConfig &c, const nlohmann::json &j, const std::string &section);
void update_from_json(LossConfig &c, const nlohmann::json &j, const std::string &section);
void update_from_json(SamplerConfig &c, const nlohmann::json &j, const std::string &section);
void update_from_json(SynthConfig &c, const nlohmann::json &j, const std::string &section);
void update_from_json(CineConfig &c, const nlohmann::json &j, const std::string &section);

/// Strict field reader used by the update_from_json overloads.
class JsonFields {
public:
  JsonFields(const nlohmann::json &j, std::string section);

  template <typename T>
  void read(const char *key, T &out)
  {
    seen_.push_back(key);
    if (!j_.contains(key)) {
      return;
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception &) {
      throw ConfigError(section_ + "." + key + " has the wrong type");
    }
  }
  bool has(const char *key) const { return j_.contains(key); }
  const nlohmann::json &child(const char *key);
  /// Throws ConfigError naming the first key that was never read.
  void finish() const;

private:
  const nlohmann::json &j_;
  std::string section_;
  std::vector<std::string> seen_;
};

} // namespace promptseg
