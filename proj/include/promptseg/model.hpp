#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "promptseg/autograd.hpp"
#include "promptseg/types.hpp"

namespace promptseg {

struct ModelConfig {
  int patch_size = 8;
  int embed_dim = 128;
  int encoder_depth = 4;
  int encoder_heads = 4;
  int encoder_mlp_ratio = 4;
  int decoder_depth = 2;
  int decoder_heads = 4;
  int prompt_embed_dim = 64;
  int decoder_mlp_dim = 256;
  int attention_downsample = 2;
  double mask_threshold = 0.5;
  std::uint64_t init_seed = 0;

  /// Throws ConfigError when a field is out of range.
  void validate() const;

  static ModelConfig teacher_default() { return {}; }
  static ModelConfig student_default();

  friend bool operator==(const ModelConfig &, const ModelConfig &) = default;
};

enum class ParamGroup { image_encoder, prompt_encoder, mask_decoder };
std::string to_string(ParamGroup group);

struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::mask_decoder;
  ag::Var var;
  /// Fixed buffers (e.g. the Fourier projection) are stored but never optimized.
  bool trainable = true;
};

/// Ordered collection of named parameters.
class ParamStore {
public:
  const ag::Var &add(std::string name, ParamGroup group, ag::Matrix init, bool trainable = true);

  const ag::Var &get(const std::string &name) const;
  Parameter &at(const std::string &name);
  bool contains(const std::string &name) const { return index_.count(name) != 0; }

  std::vector<Parameter> &all() { return params_; }
  const std::vector<Parameter> &all() const { return params_; }

  size_t count(ParamGroup group) const;
  size_t total_count() const;
  void zero_grad();

  /// FNV-1a over the raw bytes of every value in a group, in insertion order.
  std::uint64_t checksum(ParamGroup group) const;
  std::uint64_t checksum() const;

private:
  std::vector<Parameter> params_;
  std::map<std::string, size_t> index_;
};

struct PartitionCounts {
  size_t image_encoder = 0;
  size_t prompt_encoder = 0;
  size_t mask_decoder = 0;
  size_t total() const { return image_encoder + prompt_encoder + mask_decoder; }
};

/// Encoder output tokens on the (H/P) x (W/P) grid.
struct ImageEmbedding {
  int grid_height = 0;
  int grid_width = 0;
  int channels = 0;
  int image_height = 0;
  int image_width = 0;
  /// grid_height * grid_width rows, row-major over the grid.
  ag::Var tokens;
  std::string encoder_tag;
};

struct Prediction {
  MaskLogits logits;
  BinaryMask mask;
};

/// sigmoid(logit) >= threshold, inclusive.
BinaryMask binarize(const MaskLogits &logits, double threshold = 0.5);

/// Toy-scale promptable segmentation model: patch transformer image encoder,
/// Fourier-feature prompt encoder and a two-way cross-attention mask decoder.
class PromptableModel {
public:
  explicit PromptableModel(ModelConfig config);

  const ModelConfig &config() const { return config_; }
  ParamStore &params() { return params_; }
  const ParamStore &params() const { return params_; }

  void set_encoder_frozen(bool frozen);
  bool encoder_frozen() const { return encoder_frozen_; }

  /// Records the encoder graph when gradients are enabled and the encoder is trainable.
  ImageEmbedding encode_image(const ImageGrid &image) const;

  /// One token per point plus two for a box; throws InvalidArgument("no prompt") when empty.
  ag::Var encode_prompts(const PromptSet &prompts, int image_height, int image_width) const;

  /// Full-resolution logits as an image_height x image_width matrix.
  ag::Var decode_mask(const ImageEmbedding &embedding, const ag::Var &prompt_tokens) const;

  /// Inference on a precomputed embedding (no graph recorded).
  Prediction predict(const ImageEmbedding &embedding, const PromptSet &prompts) const;
  Prediction predict(const ImageGrid &image, const PromptSet &prompts) const;

  PartitionCounts parameter_partition() const;

  /// Copies values for every parameter name present in both models with equal shape.
  /// Returns the number of parameters copied.
  size_t copy_matching(const PromptableModel &source, ParamGroup group);

private:
  ag::Var attention(const std::string &prefix, const ag::Var &q, const ag::Var &k,
                    const ag::Var &v, int heads) const;
  ag::Matrix fourier_features(const ag::Matrix &coords01) const;
  ag::Matrix dense_positional_encoding(int grid_h, int grid_w) const;
  std::string encoder_tag() const;

  ModelConfig config_;
  ParamStore params_;
  bool encoder_frozen_ = false;
};

MaskLogits to_logits(const ag::Matrix &m);
ag::Matrix to_matrix(const MaskLogits &logits);

/// Fixed 2-D sinusoidal position table (rows = grid cells, row-major).
ag::Matrix sinusoidal_positions(int grid_h, int grid_w, int dim);

} // namespace promptseg
