#include "promptseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "promptseg/checkpoint.hpp"
#include "promptseg/config_io.hpp"
#include "promptseg/distiller.hpp"
#include "promptseg/mask_ops.hpp"

namespace promptseg {

using nlohmann::json;

void TrainConfig::validate() const
{
  if (!(learning_rate > 0.0)) {
    throw ConfigError("train.learning_rate must be > 0");
  }
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw ConfigError("train.decay_factor must lie in (0, 1]");
  }
  if (decay_every_epochs < 1) {
    throw ConfigError("train.decay_every_epochs must be >= 1");
  }
  if (epochs < 0) {
    throw ConfigError("train.epochs must be >= 0");
  }
  if (batch_size < 1) {
    throw ConfigError("train.batch_size must be >= 1");
  }
  if (max_prompt_rounds_per_sample < 1) {
    throw ConfigError("train.max_prompt_rounds_per_sample must be >= 1");
  }
  if (val_budget < 1) {
    throw ConfigError("train.val_budget must be >= 1");
  }
}

json to_json(const TrainConfig &c)
{
  return {{"learning_rate", c.learning_rate},
          {"decay_factor", c.decay_factor},
          {"decay_every_epochs", c.decay_every_epochs},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"max_prompt_rounds_per_sample", c.max_prompt_rounds_per_sample},
          {"freeze_encoder", c.freeze_encoder},
          {"rng_seed", c.rng_seed},
          {"val_budget", c.val_budget}};
}

void update_from_json(TrainConfig &c, const json &j, const std::string &section)
{
  JsonFields f(j, section);
  f.read("learning_rate", c.learning_rate);
  f.read("decay_factor", c.decay_factor);
  f.read("decay_every_epochs", c.decay_every_epochs);
  f.read("epochs", c.epochs);
  f.read("batch_size", c.batch_size);
  f.read("max_prompt_rounds_per_sample", c.max_prompt_rounds_per_sample);
  f.read("freeze_encoder", c.freeze_encoder);
  f.read("rng_seed", c.rng_seed);
  f.read("val_budget", c.val_budget);
  f.finish();
  c.validate();
}

double lr_at_epoch(int epoch, const TrainConfig &config)
{
  if (epoch < 0) {
    throw InvalidArgument("epoch must be >= 0");
  }
  return config.learning_rate *
         std::pow(config.decay_factor, epoch / config.decay_every_epochs);
}

Adam::Adam(std::vector<ag::Var> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps)
{
  for (const auto &p : params_) {
    m_.push_back(ag::Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(ag::Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step(double lr)
{
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto &p = params_[i];
    if (!p.node()->has_grad()) {
      continue;
    }
    const ag::Matrix &g = p.grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    p.mutable_value().array() -=
        lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

std::vector<ag::Var> optimized_parameters(PromptableModel &model)
{
  std::vector<ag::Var> out;
  for (auto &p : model.params().all()) {
    if (!p.trainable) {
      continue;
    }
    if (p.group == ParamGroup::image_encoder && model.encoder_frozen()) {
      continue;
    }
    out.push_back(p.var);
  }
  return out;
}

double validation_dsc(const PromptableModel &model, std::span<const Sample> samples, int budget,
                      const SamplerConfig &sampler)
{
  if (samples.empty()) {
    throw InvalidArgument("validation set is empty");
  }
  ag::NoGradGuard no_grad;
  double total = 0.0;
  int n = 0;
  for (const auto &s : samples) {
    if (count_foreground(s.gt) == 0) {
      continue;
    }
    const ImageEmbedding emb = model.encode_image(s.image);
    const PredictFn predict = [&](const PromptSet &p) { return model.predict(emb, p).mask; };
    auto rng = derive_rng(sampler.rng_seed, s.id);
    SessionOptions options;
    options.budget = budget;
    options.mode = SamplingMode::eval;
    const SessionResult r = simulate_session(predict, s.gt, options, sampler, rng, s.id);
    total += r.trace.dsc_per_click.back();
    ++n;
  }
  if (n == 0) {
    throw InvalidArgument("validation set has no non-empty ground truth");
  }
  return total / n;
}

json to_json(const TrainReport &r)
{
  json j;
  j["epoch_loss"] = r.epoch_loss;
  j["val_dsc"] = r.val_dsc;
  j["lr_trace"] = r.lr_trace;
  j["epoch_mask_term"] = r.epoch_mask_term;
  j["epoch_distill_term"] = r.epoch_distill_term;
  j["encoder_checksum_before"] = r.encoder_checksum_before;
  j["encoder_checksum_after"] = r.encoder_checksum_after;
  j["best_epoch"] = r.best_epoch;
  j["best_val_dsc"] = r.best_val_dsc;
  j["skipped_samples"] = r.skipped_samples;
  j["seconds"] = r.seconds;
  for (const auto &item : r.extra.items()) {
    j[item.key()] = item.value();
  }
  return j;
}

Trainer::Trainer(PromptableModel &model, TrainConfig config, SamplerConfig sampler,
                 LossConfig loss)
    : model_(model), config_(config), sampler_(std::move(sampler)), loss_(loss),
      optimizer_((model.set_encoder_frozen(config.freeze_encoder), optimized_parameters(model))),
      rng_(config.rng_seed), teacher_rng_(config.rng_seed ^ 0x7eac4e2ULL)
{
  config_.validate();
  sampler_.validate();
  loss_.validate();
}

ImageEmbedding Trainer::embed(const Sample &sample)
{
  if (!model_.encoder_frozen()) {
    return model_.encode_image(sample.image);
  }
  const auto it = cache_.find(sample.id);
  if (it != cache_.end()) {
    return it->second;
  }
  ag::NoGradGuard no_grad;
  ImageEmbedding emb = model_.encode_image(sample.image);
  cache_.emplace(sample.id, emb);
  return emb;
}

ag::Matrix Trainer::teacher_target(const Sample &sample, const PromptSet &first)
{
  ag::NoGradGuard no_grad;
  auto it = teacher_cache_.find(sample.id);
  if (it == teacher_cache_.end()) {
    it = teacher_cache_.emplace(sample.id, teacher_->encode_image(sample.image)).first;
  }
  std::vector<TeacherRound> rounds;
  PromptSet prompts = first;
  for (int round = 0; round < config_.max_prompt_rounds_per_sample; ++round) {
    Prediction p = teacher_->predict(it->second, prompts);
    rounds.push_back({to_matrix(p.logits), dsc(p.mask, sample.gt)});
    if (round + 1 == config_.max_prompt_rounds_per_sample) {
      break;
    }
    const auto click = next_click(p.mask, sample.gt, sampler_, SamplingMode::train, teacher_rng_);
    if (!click) {
      break;
    }
    prompts.points.push_back(*click);
  }
  return select_best_teacher_output(rounds);
}

StepStats Trainer::run(std::span<const Sample *const> batch, bool update, double lr)
{
  std::optional<ag::NoGradGuard> no_grad;
  if (!update) {
    no_grad.emplace();
  }
  StepStats stats;
  std::vector<std::vector<std::pair<ag::Var, ag::Matrix>>> per_sample;
  std::vector<double> sample_loss, sample_mask, sample_distill;
  for (const Sample *s : batch) {
    if (count_foreground(s->gt) == 0) {
      spdlog::warn("skipping sample {}: empty ground truth", s->id);
      ++stats.skipped;
      continue;
    }
    const ImageEmbedding emb = embed(*s);
    const ag::Matrix target = mask_to_matrix(s->gt);
    PromptSet prompts = initial_prompt(s->gt, sampler_, SamplingMode::train, rng_);
    // One best-round target per sample, shared by all student rounds.
    const ag::Matrix target_logits = teacher_ ? teacher_target(*s, prompts) : ag::Matrix();
    std::vector<std::pair<ag::Var, ag::Matrix>> roots;
    double total = 0.0, mask_total = 0.0, distill_total = 0.0;
    for (int round = 0; round < config_.max_prompt_rounds_per_sample; ++round) {
      const ag::Var tokens = model_.encode_prompts(prompts, s->image.height(), s->image.width());
      ag::Var logits = model_.decode_mask(emb, tokens);
      ag::Matrix grad;
      if (teacher_) {
        StudentLossTerm term = student_loss(logits.value(), target, target_logits, loss_);
        total += term.value;
        mask_total += term.mask_term;
        distill_total += term.distill_term;
        grad = std::move(term.grad);
      } else {
        LossTerm term = dicefocal_loss(logits.value(), target, loss_);
        total += term.value;
        mask_total += term.value;
        grad = std::move(term.grad);
      }
      ++stats.predictions;
      const bool last = round + 1 == config_.max_prompt_rounds_per_sample;
      BinaryMask pred;
      if (!last) {
        pred = binarize(to_logits(logits.value()), model_.config().mask_threshold);
      }
      roots.emplace_back(std::move(logits), std::move(grad));
      if (last) {
        break;
      }
      // The previous prediction only places the click; it is not differentiated.
      const auto click = next_click(pred, s->gt, sampler_, SamplingMode::train, rng_);
      if (!click) {
        break;
      }
      prompts.points.push_back(*click);
    }
    const auto n_rounds = static_cast<double>(roots.size());
    sample_loss.push_back(total / n_rounds);
    sample_mask.push_back(mask_total / n_rounds);
    sample_distill.push_back(distill_total / n_rounds);
    per_sample.push_back(std::move(roots));
  }
  stats.samples = static_cast<int>(per_sample.size());
  if (stats.samples == 0) {
    return stats;
  }
  stats.loss = std::accumulate(sample_loss.begin(), sample_loss.end(), 0.0) / stats.samples;
  stats.mask_term = std::accumulate(sample_mask.begin(), sample_mask.end(), 0.0) / stats.samples;
  stats.distill_term =
      std::accumulate(sample_distill.begin(), sample_distill.end(), 0.0) / stats.samples;
  if (!update) {
    return stats;
  }
  std::vector<std::pair<ag::Var, ag::Matrix>> roots;
  for (auto &sample_roots : per_sample) {
    const double w = 1.0 / (static_cast<double>(sample_roots.size()) * stats.samples);
    for (auto &[var, grad] : sample_roots) {
      roots.emplace_back(var, grad * w);
    }
  }
  model_.params().zero_grad();
  ag::backward(roots);
  optimizer_.step(lr);
  return stats;
}

StepStats Trainer::step(std::span<const Sample *const> batch, double lr)
{
  return run(batch, true, lr);
}

StepStats Trainer::evaluate_loss(std::span<const Sample *const> batch)
{
  return run(batch, false, 0.0);
}

TrainReport Trainer::fit(std::span<const Sample> train, std::span<const Sample> val,
                         const std::optional<std::filesystem::path> &out_dir,
                         const EpochHook &hook)
{
  if (train.empty()) {
    throw InvalidArgument("training set is empty");
  }
  if (val.empty()) {
    throw InvalidArgument("validation set is empty");
  }
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.encoder_checksum_before = model_.params().checksum(ParamGroup::image_encoder);
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<ag::Matrix> best_values;

  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, config_);
    report.lr_trace.push_back(lr);
    std::shuffle(order.begin(), order.end(), rng_);
    double loss_sum = 0.0, mask_sum = 0.0, distill_sum = 0.0;
    int counted = 0;
    std::vector<const Sample *> batch;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(config_.batch_size)) {
      batch.clear();
      for (size_t k = i; k < std::min(order.size(), i + config_.batch_size); ++k) {
        batch.push_back(&train[order[k]]);
      }
      const StepStats st = step(batch, lr);
      loss_sum += st.loss * st.samples;
      mask_sum += st.mask_term * st.samples;
      distill_sum += st.distill_term * st.samples;
      counted += st.samples;
      report.skipped_samples += st.skipped;
    }
    const double mean_loss = counted > 0 ? loss_sum / counted : 0.0;
    const double vd = validation_dsc(model_, val, config_.val_budget, sampler_);
    report.epoch_loss.push_back(mean_loss);
    report.epoch_mask_term.push_back(counted > 0 ? mask_sum / counted : 0.0);
    report.epoch_distill_term.push_back(counted > 0 ? distill_sum / counted : 0.0);
    report.val_dsc.push_back(vd);
    spdlog::info("epoch {} lr {:.3g} loss {:.4f} val_dsc {:.4f}", epoch, lr, mean_loss, vd);
    if (hook) {
      hook(epoch, mean_loss, vd);
    }
    const bool improved = report.best_epoch < 0 || vd > report.best_val_dsc;
    if (improved) {
      report.best_epoch = epoch;
      report.best_val_dsc = vd;
      best_values.clear();
      for (const auto &p : model_.params().all()) {
        best_values.push_back(p.var.value());
      }
    }
    if (out_dir) {
      save_checkpoint(model_, *out_dir / "checkpoints" / "latest.ckpt",
                      {{"epoch", epoch}, {"val_dsc", vd}});
      if (improved) {
        save_checkpoint(model_, *out_dir / "checkpoints" / "best.ckpt",
                        {{"epoch", epoch}, {"val_dsc", vd}});
      }
    }
  }
  // Leave the model holding the best-validation weights.
  if (!best_values.empty()) {
    auto &all = model_.params().all();
    for (size_t i = 0; i < all.size(); ++i) {
      all[i].var.mutable_value() = best_values[i];
    }
  }
  report.encoder_checksum_after = model_.params().checksum(ParamGroup::image_encoder);
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

} // namespace promptseg
