#include "promptseg/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <random>

namespace promptseg {

using ag::Matrix;
using ag::Var;

void ModelConfig::validate() const
{
  auto positive = [](int v, const char *name) {
    if (v <= 0) {
      throw ConfigError(std::string("model.") + name + " must be a positive integer");
    }
  };
  positive(patch_size, "patch_size");
  positive(embed_dim, "embed_dim");
  positive(encoder_depth, "encoder_depth");
  positive(encoder_heads, "encoder_heads");
  positive(encoder_mlp_ratio, "encoder_mlp_ratio");
  positive(decoder_depth, "decoder_depth");
  positive(decoder_heads, "decoder_heads");
  positive(prompt_embed_dim, "prompt_embed_dim");
  positive(decoder_mlp_dim, "decoder_mlp_dim");
  positive(attention_downsample, "attention_downsample");
  if (embed_dim % encoder_heads != 0) {
    throw ConfigError("model.embed_dim must be divisible by model.encoder_heads");
  }
  if (prompt_embed_dim % 8 != 0) {
    throw ConfigError("model.prompt_embed_dim must be divisible by 8");
  }
  if (prompt_embed_dim % decoder_heads != 0 ||
      (prompt_embed_dim / attention_downsample) % decoder_heads != 0) {
    throw ConfigError("model.prompt_embed_dim is incompatible with model.decoder_heads");
  }
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) {
    throw ConfigError("model.mask_threshold must lie in (0, 1)");
  }
}

ModelConfig ModelConfig::student_default()
{
  ModelConfig c;
  c.embed_dim = 64;
  c.encoder_depth = 2;
  c.encoder_heads = 2;
  return c;
}

std::string to_string(ParamGroup group)
{
  switch (group) {
  case ParamGroup::image_encoder:
    return "image_encoder";
  case ParamGroup::prompt_encoder:
    return "prompt_encoder";
  case ParamGroup::mask_decoder:
    return "mask_decoder";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// ParamStore

const Var &ParamStore::add(std::string name, ParamGroup group, Matrix init, bool trainable)
{
  if (index_.count(name)) {
    throw InvalidArgument("duplicate parameter name " + name);
  }
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), group, Var(std::move(init), trainable), trainable});
  return params_.back().var;
}

const Var &ParamStore::get(const std::string &name) const
{
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw InvalidArgument("unknown parameter " + name);
  }
  return params_[it->second].var;
}

Parameter &ParamStore::at(const std::string &name)
{
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw InvalidArgument("unknown parameter " + name);
  }
  return params_[it->second];
}

size_t ParamStore::count(ParamGroup group) const
{
  size_t n = 0;
  for (const auto &p : params_) {
    if (p.group == group) {
      n += static_cast<size_t>(p.var.value().size());
    }
  }
  return n;
}

size_t ParamStore::total_count() const
{
  size_t n = 0;
  for (const auto &p : params_) {
    n += static_cast<size_t>(p.var.value().size());
  }
  return n;
}

void ParamStore::zero_grad()
{
  for (auto &p : params_) {
    p.var.node()->grad.resize(0, 0);
  }
}

namespace {

void fnv1a(std::uint64_t &h, const void *data, size_t n)
{
  const auto *bytes = static_cast<const unsigned char *>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
}

} // namespace

std::uint64_t ParamStore::checksum(ParamGroup group) const
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto &p : params_) {
    if (p.group == group) {
      const Matrix &v = p.var.value();
      fnv1a(h, v.data(), static_cast<size_t>(v.size()) * sizeof(double));
    }
  }
  return h;
}

std::uint64_t ParamStore::checksum() const
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto &p : params_) {
    const Matrix &v = p.var.value();
    fnv1a(h, v.data(), static_cast<size_t>(v.size()) * sizeof(double));
  }
  return h;
}

// ---------------------------------------------------------------------------
// helpers

BinaryMask binarize(const MaskLogits &logits, double threshold)
{
  BinaryMask mask(logits.height(), logits.width());
  for (size_t i = 0; i < logits.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits[i]));
    mask[i] = p >= threshold ? 1 : 0;
  }
  return mask;
}

MaskLogits to_logits(const Matrix &m)
{
  MaskLogits out(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
  std::memcpy(out.storage().data(), m.data(), sizeof(double) * static_cast<size_t>(m.size()));
  return out;
}

Matrix to_matrix(const MaskLogits &logits)
{
  return Eigen::Map<const Matrix>(logits.storage().data(), logits.height(), logits.width());
}

Matrix sinusoidal_positions(int grid_h, int grid_w, int dim)
{
  Matrix pos = Matrix::Zero(static_cast<Eigen::Index>(grid_h) * grid_w, dim);
  const int quarter = dim / 4;
  for (int i = 0; i < grid_h; ++i) {
    for (int j = 0; j < grid_w; ++j) {
      const Eigen::Index r = static_cast<Eigen::Index>(i) * grid_w + j;
      for (int k = 0; k < quarter; ++k) {
        const double freq = std::pow(100.0, -static_cast<double>(k) / std::max(quarter, 1));
        pos(r, k) = std::sin(i * freq);
        pos(r, quarter + k) = std::cos(i * freq);
        pos(r, 2 * quarter + k) = std::sin(j * freq);
        pos(r, 3 * quarter + k) = std::cos(j * freq);
      }
    }
  }
  return pos;
}

namespace {

class Initializer {
public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Matrix trunc_normal(Eigen::Index rows, Eigen::Index cols, double std)
  {
    Matrix m(rows, cols);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      double z = dist(rng_);
      while (std::abs(z) > 2.0) {
        z = dist(rng_);
      }
      m.data()[i] = z * std;
    }
    return m;
  }

  Matrix normal(Eigen::Index rows, Eigen::Index cols, double std)
  {
    Matrix m(rows, cols);
    std::normal_distribution<double> dist(0.0, std);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = dist(rng_);
    }
    return m;
  }

private:
  std::mt19937_64 rng_;
};

void add_linear(ParamStore &store, Initializer &init, const std::string &prefix, int in, int out,
                ParamGroup group, double gain = 1.0)
{
  store.add(prefix + ".weight", group,
            init.trunc_normal(in, out, gain / std::sqrt(static_cast<double>(in))));
  store.add(prefix + ".bias", group, Matrix::Zero(1, out));
}

void add_norm(ParamStore &store, const std::string &prefix, int dim, ParamGroup group)
{
  store.add(prefix + ".weight", group, Matrix::Ones(1, dim));
  store.add(prefix + ".bias", group, Matrix::Zero(1, dim));
}

void add_attention(ParamStore &store, Initializer &init, const std::string &prefix, int dim,
                   int internal, ParamGroup group, double out_gain = 1.0)
{
  add_linear(store, init, prefix + ".q", dim, internal, group);
  add_linear(store, init, prefix + ".k", dim, internal, group);
  add_linear(store, init, prefix + ".v", dim, internal, group);
  add_linear(store, init, prefix + ".o", internal, dim, group, out_gain);
}

Var linear(const ParamStore &store, const Var &x, const std::string &prefix)
{
  return ag::add_row(ag::matmul(x, store.get(prefix + ".weight")), store.get(prefix + ".bias"));
}

Var norm(const ParamStore &store, const Var &x, const std::string &prefix)
{
  return ag::layer_norm(x, store.get(prefix + ".weight"), store.get(prefix + ".bias"));
}

std::string block(const std::string &base, int i) { return base + "." + std::to_string(i); }

} // namespace

// ---------------------------------------------------------------------------
// PromptableModel

PromptableModel::PromptableModel(ModelConfig config) : config_(config)
{
  config_.validate();
  Initializer init(config_.init_seed);
  const int d = config_.embed_dim;
  const int c = config_.prompt_embed_dim;
  const int p2 = config_.patch_size * config_.patch_size;
  constexpr auto enc = ParamGroup::image_encoder;
  constexpr auto pe = ParamGroup::prompt_encoder;
  constexpr auto dec = ParamGroup::mask_decoder;

  // Image encoder. Residual branch outputs start small so each block is close
  // to the identity map.
  const double residual_gain = 1.0 / std::sqrt(2.0 * config_.encoder_depth);
  add_linear(params_, init, "encoder.patch_embed", p2, d, enc);
  for (int b = 0; b < config_.encoder_depth; ++b) {
    const std::string pre = block("encoder.blocks", b);
    add_norm(params_, pre + ".norm1", d, enc);
    add_attention(params_, init, pre + ".attn", d, d, enc, residual_gain);
    add_norm(params_, pre + ".norm2", d, enc);
    add_linear(params_, init, pre + ".mlp.fc1", d, d * config_.encoder_mlp_ratio, enc);
    add_linear(params_, init, pre + ".mlp.fc2", d * config_.encoder_mlp_ratio, d, enc,
               residual_gain);
  }
  add_linear(params_, init, "encoder.neck.proj", d, c, enc);
  add_norm(params_, "encoder.neck.norm", c, enc);

  // Prompt encoder.
  params_.add("prompt_encoder.pe_gaussian", pe, init.normal(2, c / 2, 1.0), false);
  params_.add("prompt_encoder.label_embed", pe, init.trunc_normal(2, c, 0.02 * 10));
  params_.add("prompt_encoder.corner_embed", pe, init.trunc_normal(2, c, 0.02 * 10));
  params_.add("prompt_encoder.no_mask_embed", pe, init.trunc_normal(1, c, 0.02));

  // Mask decoder.
  const int ci = c / config_.attention_downsample;
  const int c1 = c / 4;
  const int c2 = c / 8;
  params_.add("decoder.mask_token", dec, init.trunc_normal(1, c, 0.02 * 10));
  for (int l = 0; l < config_.decoder_depth; ++l) {
    const std::string pre = block("decoder.layers", l);
    add_attention(params_, init, pre + ".self_attn", c, c, dec);
    add_norm(params_, pre + ".norm1", c, dec);
    add_attention(params_, init, pre + ".cross_t2i", c, ci, dec);
    add_norm(params_, pre + ".norm2", c, dec);
    add_linear(params_, init, pre + ".mlp.fc1", c, config_.decoder_mlp_dim, dec);
    add_linear(params_, init, pre + ".mlp.fc2", config_.decoder_mlp_dim, c, dec);
    add_norm(params_, pre + ".norm3", c, dec);
    add_attention(params_, init, pre + ".cross_i2t", c, ci, dec);
    add_norm(params_, pre + ".norm4", c, dec);
  }
  add_attention(params_, init, "decoder.final_attn", c, ci, dec);
  add_norm(params_, "decoder.final_norm", c, dec);
  params_.add("decoder.upscale1.weight", dec,
              init.trunc_normal(c, 4 * c1, 1.0 / std::sqrt(static_cast<double>(c))));
  params_.add("decoder.upscale1.bias", dec, Matrix::Zero(1, c1));
  add_norm(params_, "decoder.upscale_norm", c1, dec);
  params_.add("decoder.upscale2.weight", dec,
              init.trunc_normal(c1, 4 * c2, 1.0 / std::sqrt(static_cast<double>(c1))));
  params_.add("decoder.upscale2.bias", dec, Matrix::Zero(1, c2));
  add_linear(params_, init, "decoder.hyper.fc1", c, c, dec);
  add_linear(params_, init, "decoder.hyper.fc2", c, c, dec);
  add_linear(params_, init, "decoder.hyper.fc3", c, c2, dec);
}

void PromptableModel::set_encoder_frozen(bool frozen)
{
  encoder_frozen_ = frozen;
  for (auto &p : params_.all()) {
    if (p.group == ParamGroup::image_encoder) {
      p.var.set_requires_grad(p.trainable && !frozen);
      if (frozen) {
        p.var.zero_grad();
      }
    }
  }
}

Var PromptableModel::attention(const std::string &prefix, const Var &q, const Var &k,
                               const Var &v, int heads) const
{
  const Var qp = linear(params_, q, prefix + ".q");
  const Var kp = linear(params_, k, prefix + ".k");
  const Var vp = linear(params_, v, prefix + ".v");
  const Eigen::Index internal = qp.cols();
  const Eigen::Index dh = internal / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Var qh = ag::slice_cols(qp, h * dh, dh);
    const Var kh = ag::slice_cols(kp, h * dh, dh);
    const Var vh = ag::slice_cols(vp, h * dh, dh);
    const Var attn = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), inv_sqrt));
    outs.push_back(ag::matmul(attn, vh));
  }
  const Var merged = heads == 1 ? outs.front() : ag::concat_cols(outs);
  return linear(params_, merged, prefix + ".o");
}

std::string PromptableModel::encoder_tag() const
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "enc-%016llx",
                static_cast<unsigned long long>(params_.checksum(ParamGroup::image_encoder)));
  return buf;
}

ImageEmbedding PromptableModel::encode_image(const ImageGrid &image) const
{
  const int ps = config_.patch_size;
  if (image.height() <= 0 || image.width() <= 0) {
    throw ShapeError("image must have positive dimensions");
  }
  if (image.height() % ps != 0) {
    throw ShapeError("image height " + std::to_string(image.height()) +
                     " is not divisible by patch size " + std::to_string(ps));
  }
  if (image.width() % ps != 0) {
    throw ShapeError("image width " + std::to_string(image.width()) +
                     " is not divisible by patch size " + std::to_string(ps));
  }
  const int gh = image.height() / ps;
  const int gw = image.width() / ps;
  Matrix patches(static_cast<Eigen::Index>(gh) * gw, ps * ps);
  for (int i = 0; i < gh; ++i) {
    for (int j = 0; j < gw; ++j) {
      const Eigen::Index r = static_cast<Eigen::Index>(i) * gw + j;
      for (int y = 0; y < ps; ++y) {
        for (int x = 0; x < ps; ++x) {
          patches(r, y * ps + x) = (image(i * ps + y, j * ps + x) - 0.5) * 2.0;
        }
      }
    }
  }

  Var x = ag::add(linear(params_, ag::constant(std::move(patches)), "encoder.patch_embed"),
                  ag::constant(sinusoidal_positions(gh, gw, config_.embed_dim)));
  for (int b = 0; b < config_.encoder_depth; ++b) {
    const std::string pre = block("encoder.blocks", b);
    const Var h1 = norm(params_, x, pre + ".norm1");
    x = ag::add(x, attention(pre + ".attn", h1, h1, h1, config_.encoder_heads));
    const Var h2 = norm(params_, x, pre + ".norm2");
    x = ag::add(x, linear(params_, ag::gelu(linear(params_, h2, pre + ".mlp.fc1")),
                          pre + ".mlp.fc2"));
  }
  Var neck = norm(params_, linear(params_, x, "encoder.neck.proj"), "encoder.neck.norm");

  ImageEmbedding out;
  out.grid_height = gh;
  out.grid_width = gw;
  out.channels = config_.prompt_embed_dim;
  out.image_height = image.height();
  out.image_width = image.width();
  out.tokens = std::move(neck);
  out.encoder_tag = encoder_tag();
  return out;
}

Matrix PromptableModel::fourier_features(const Matrix &coords01) const
{
  const Matrix &g = params_.get("prompt_encoder.pe_gaussian").value();
  Matrix centered = coords01.array() * 2.0 - 1.0;
  Matrix proj = (centered * g) * (2.0 * std::numbers::pi);
  Matrix out(proj.rows(), proj.cols() * 2);
  out.leftCols(proj.cols()) = proj.array().sin();
  out.rightCols(proj.cols()) = proj.array().cos();
  return out;
}

Matrix PromptableModel::dense_positional_encoding(int grid_h, int grid_w) const
{
  Matrix coords(static_cast<Eigen::Index>(grid_h) * grid_w, 2);
  for (int i = 0; i < grid_h; ++i) {
    for (int j = 0; j < grid_w; ++j) {
      coords(static_cast<Eigen::Index>(i) * grid_w + j, 0) = (j + 0.5) / grid_w;
      coords(static_cast<Eigen::Index>(i) * grid_w + j, 1) = (i + 0.5) / grid_h;
    }
  }
  return fourier_features(coords);
}

Var PromptableModel::encode_prompts(const PromptSet &prompts, int image_height,
                                    int image_width) const
{
  if (prompts.empty()) {
    throw InvalidArgument("no prompt");
  }
  validate_prompts(prompts, image_height, image_width);
  const Eigen::Index n = static_cast<Eigen::Index>(prompts.token_count());
  Matrix coords(n, 2);
  Eigen::Index row = 0;
  for (const auto &p : prompts.points) {
    coords(row, 0) = (p.x + 0.5) / image_width;
    coords(row, 1) = (p.y + 0.5) / image_height;
    ++row;
  }
  if (prompts.box) {
    const Box &b = *prompts.box;
    coords(row, 0) = static_cast<double>(b.x0) / image_width;
    coords(row, 1) = static_cast<double>(b.y0) / image_height;
    coords(row + 1, 0) = static_cast<double>(b.x1) / image_width;
    coords(row + 1, 1) = static_cast<double>(b.y1) / image_height;
  }
  const Var pe = ag::constant(fourier_features(coords));

  const Var &labels = params_.get("prompt_encoder.label_embed");
  const Var &corners = params_.get("prompt_encoder.corner_embed");
  std::vector<Var> rows;
  rows.reserve(static_cast<size_t>(n));
  for (const auto &p : prompts.points) {
    rows.push_back(ag::slice_rows(labels, p.label == Label::positive ? 1 : 0, 1));
  }
  if (prompts.box) {
    rows.push_back(ag::slice_rows(corners, 0, 1));
    rows.push_back(ag::slice_rows(corners, 1, 1));
  }
  return ag::add(pe, ag::concat_rows(rows));
}

Var PromptableModel::decode_mask(const ImageEmbedding &embedding, const Var &prompt_tokens) const
{
  const int c = config_.prompt_embed_dim;
  if (embedding.channels != c || embedding.tokens.cols() != c) {
    throw ShapeError("image embedding has " + std::to_string(embedding.channels) +
                     " channels but the decoder expects " + std::to_string(c));
  }
  if (prompt_tokens.cols() != c) {
    throw ShapeError("prompt embeddings do not match the decoder width");
  }
  const int gh = embedding.grid_height;
  const int gw = embedding.grid_width;
  if (embedding.tokens.rows() != static_cast<Eigen::Index>(gh) * gw) {
    throw ShapeError("image embedding token count does not match its grid");
  }

  Var keys = ag::add_row(embedding.tokens, params_.get("prompt_encoder.no_mask_embed"));
  const Var key_pe = ag::constant(dense_positional_encoding(gh, gw));
  const Var tokens = ag::concat_rows({params_.get("decoder.mask_token"), prompt_tokens});
  const Var query_pe = tokens;
  Var queries = tokens;
  const int heads = config_.decoder_heads;

  for (int l = 0; l < config_.decoder_depth; ++l) {
    const std::string pre = block("decoder.layers", l);
    if (l == 0) {
      queries = attention(pre + ".self_attn", queries, queries, queries, heads);
    } else {
      const Var q = ag::add(queries, query_pe);
      queries = ag::add(queries, attention(pre + ".self_attn", q, q, queries, heads));
    }
    queries = norm(params_, queries, pre + ".norm1");

    Var q = ag::add(queries, query_pe);
    Var k = ag::add(keys, key_pe);
    queries = norm(params_, ag::add(queries, attention(pre + ".cross_t2i", q, k, keys, heads)),
                   pre + ".norm2");

    const Var mlp = linear(params_, ag::relu(linear(params_, queries, pre + ".mlp.fc1")),
                           pre + ".mlp.fc2");
    queries = norm(params_, ag::add(queries, mlp), pre + ".norm3");

    q = ag::add(queries, query_pe);
    k = ag::add(keys, key_pe);
    keys = norm(params_, ag::add(keys, attention(pre + ".cross_i2t", k, q, queries, heads)),
                pre + ".norm4");
  }
  {
    const Var q = ag::add(queries, query_pe);
    const Var k = ag::add(keys, key_pe);
    queries = norm(params_, ag::add(queries, attention("decoder.final_attn", q, k, keys, heads)),
                   "decoder.final_norm");
  }

  const Var mask_token = ag::slice_rows(queries, 0, 1);
  Var hyper = ag::relu(linear(params_, mask_token, "decoder.hyper.fc1"));
  hyper = ag::relu(linear(params_, hyper, "decoder.hyper.fc2"));
  hyper = linear(params_, hyper, "decoder.hyper.fc3");

  Var up = ag::pixel_shuffle(ag::matmul(keys, params_.get("decoder.upscale1.weight")), gh, gw, 2);
  up = ag::add_row(up, params_.get("decoder.upscale1.bias"));
  up = ag::gelu(norm(params_, up, "decoder.upscale_norm"));
  up = ag::pixel_shuffle(ag::matmul(up, params_.get("decoder.upscale2.weight")), 2 * gh, 2 * gw,
                         2);
  up = ag::gelu(ag::add_row(up, params_.get("decoder.upscale2.bias")));

  const Var low = ag::reshape(ag::matmul_nt(hyper, up), 4 * gh, 4 * gw);
  return ag::resize_bilinear(low, embedding.image_height, embedding.image_width);
}

Prediction PromptableModel::predict(const ImageEmbedding &embedding, const PromptSet &prompts) const
{
  ag::NoGradGuard guard;
  const Var tokens = encode_prompts(prompts, embedding.image_height, embedding.image_width);
  const Var logits = decode_mask(embedding, tokens);
  Prediction out;
  out.logits = to_logits(logits.value());
  out.mask = binarize(out.logits, config_.mask_threshold);
  return out;
}

Prediction PromptableModel::predict(const ImageGrid &image, const PromptSet &prompts) const
{
  validate_image(image);
  if (prompts.empty()) {
    throw InvalidArgument("no prompt");
  }
  validate_prompts(prompts, image.height(), image.width());
  ag::NoGradGuard guard;
  return predict(encode_image(image), prompts);
}

PartitionCounts PromptableModel::parameter_partition() const
{
  PartitionCounts counts;
  counts.image_encoder = params_.count(ParamGroup::image_encoder);
  counts.prompt_encoder = params_.count(ParamGroup::prompt_encoder);
  counts.mask_decoder = params_.count(ParamGroup::mask_decoder);
  return counts;
}

size_t PromptableModel::copy_matching(const PromptableModel &source, ParamGroup group)
{
  size_t copied = 0;
  for (auto &p : params_.all()) {
    if (p.group != group || !source.params().contains(p.name)) {
      continue;
    }
    const Matrix &src = source.params().get(p.name).value();
    if (src.rows() == p.var.rows() && src.cols() == p.var.cols()) {
      p.var.mutable_value() = src;
      ++copied;
    }
  }
  return copied;
}

} // namespace promptseg
