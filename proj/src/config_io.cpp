#include "promptseg/config_io.hpp"

#include <algorithm>

namespace promptseg {

using nlohmann::json;

JsonFields::JsonFields(const json &j, std::string section) : j_(j), section_(std::move(section))
{
  if (!j_.is_object()) {
    throw ConfigError(section_ + " must be an object");
  }
}

const json &JsonFields::child(const char *key)
{
  seen_.push_back(key);
  return j_.at(key);
}

void JsonFields::finish() const
{
  for (const auto &item : j_.items()) {
    if (std::find(seen_.begin(), seen_.end(), item.key()) == seen_.end()) {
      throw ConfigError("unknown configuration key " + section_ + "." + item.key());
    }
  }
}

json to_json(const ModelConfig &c)
{
  return {{"patch_size", c.patch_size},
          {"embed_dim", c.embed_dim},
          {"encoder_depth", c.encoder_depth},
          {"encoder_heads", c.encoder_heads},
          {"encoder_mlp_ratio", c.encoder_mlp_ratio},
          {"decoder_depth", c.decoder_depth},
          {"decoder_heads", c.decoder_heads},
          {"prompt_embed_dim", c.prompt_embed_dim},
          {"decoder_mlp_dim", c.decoder_mlp_dim},
          {"attention_downsample", c.attention_downsample},
          {"mask_threshold", c.mask_threshold},
          {"init_seed", c.init_seed}};
}

void update_from_json(ModelConfig &c, const json &j, const std::string &section)
{
  JsonFields f(j, section);
  f.read("patch_size", c.patch_size);
  f.read("embed_dim", c.embed_dim);
  f.read("encoder_depth", c.encoder_depth);
  f.read("encoder_heads", c.encoder_heads);
  f.read("encoder_mlp_ratio", c.encoder_mlp_ratio);
  f.read("decoder_depth", c.decoder_depth);
  f.read("decoder_heads", c.decoder_heads);
  f.read("prompt_embed_dim", c.prompt_embed_dim);
  f.read("decoder_mlp_dim", c.decoder_mlp_dim);
  f.read("attention_downsample", c.attention_downsample);
  f.read("mask_threshold", c.mask_threshold);
  f.read("init_seed", c.init_seed);
  f.finish();
  c.validate();
}

json to_json(const LossConfig &c)
{
  return {{"focal_gamma", c.focal_gamma}, {"dice_weight", c.dice_weight},
          {"focal_weight", c.focal_weight}, {"alpha", c.alpha},
          {"smooth", c.smooth},           {"prob_epsilon", c.prob_epsilon}};
}

void update_from_json(LossConfig &c, const json &j, const std::string &section)
{
  JsonFields f(j, section);
  f.read("focal_gamma", c.focal_gamma);
  f.read("dice_weight", c.dice_weight);
  f.read("focal_weight", c.focal_weight);
  f.read("alpha", c.alpha);
  f.read("smooth", c.smooth);
  f.read("prob_epsilon", c.prob_epsilon);
  f.finish();
  c.validate();
}

json to_json(const SamplerConfig &c)
{
  return {{"jitter_fraction", c.jitter_fraction},
          {"point_box_probability", c.point_box_probability},
          {"eval_strategy", c.eval_strategy},
          {"rng_seed", c.rng_seed},
          {"max_point_attempts", c.max_point_attempts}};
}

void update_from_json(SamplerConfig &c, const json &j, const std::string &section)
{
  JsonFields f(j, section);
  f.read("jitter_fraction", c.jitter_fraction);
  f.read("point_box_probability", c.point_box_probability);
  f.read("eval_strategy", c.eval_strategy);
  f.read("rng_seed", c.rng_seed);
  f.read("max_point_attempts", c.max_point_attempts);
  f.finish();
  c.validate();
}

json to_json(const SynthConfig &c)
{
  return {{"height", c.height},
          {"width", c.width},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"shape", c.shape},
          {"echogenicity", c.echogenicity},
          {"speckle_strength", c.speckle_strength},
          {"min_semi_axis", c.min_semi_axis},
          {"max_semi_axis", c.max_semi_axis},
          {"min_area", c.min_area},
          {"blur_sigma", c.blur_sigma},
          {"cone", c.cone},
          {"cone_angle_deg", c.cone_angle_deg},
          {"cone_apex_y", c.cone_apex_y},
          {"rng_seed", c.rng_seed}};
}

void update_from_json(SynthConfig &c, const json &j, const std::string &section)
{
  JsonFields f(j, section);
  f.read("height", c.height);
  f.read("width", c.width);
  f.read("min_objects", c.min_objects);
  f.read("max_objects", c.max_objects);
  f.read("shape", c.shape);
  f.read("echogenicity", c.echogenicity);
  f.read("speckle_strength", c.speckle_strength);
  f.read("min_semi_axis", c.min_semi_axis);
  f.read("max_semi_axis", c.max_semi_axis);
  f.read("min_area", c.min_area);
  f.read("blur_sigma", c.blur_sigma);
  f.read("cone", c.cone);
  f.read("cone_angle_deg", c.cone_angle_deg);
  f.read("cone_apex_y", c.cone_apex_y);
  f.read("rng_seed", c.rng_seed);
  f.finish();
  c.validate();
}

json to_json(const CineConfig &c)
{
  return {{"height", c.height},   {"width", c.width},
          {"frames", c.frames},   {"motion", c.motion},
          {"view", c.view},       {"dx", c.dx},
          {"dy", c.dy},           {"speckle_strength", c.speckle_strength},
          {"pulsation", c.pulsation}, {"rng_seed", c.rng_seed}};
}

void update_from_json(CineConfig &c, const json &j, const std::string &section)
{
  JsonFields f(j, section);
  f.read("height", c.height);
  f.read("width", c.width);
  f.read("frames", c.frames);
  f.read("motion", c.motion);
  f.read("view", c.view);
  f.read("dx", c.dx);
  f.read("dy", c.dy);
  f.read("speckle_strength", c.speckle_strength);
  f.read("pulsation", c.pulsation);
  f.read("rng_seed", c.rng_seed);
  f.finish();
  c.validate();
}

} // namespace promptseg
