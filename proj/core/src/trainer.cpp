#include "gasnext/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "config_json.hpp"
#include "gasnext/checkpoint.hpp"
#include "gasnext/error.hpp"

namespace gasnext {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1 / train.beta2 must be in [0, 1)");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (steps < 1) throw ConfigError("train.steps must be at least 1");
  if (d_steps_per_g < 1) throw ConfigError("train.d_steps_per_g must be at least 1");
  if (eval_every < 0 || checkpoint_every < 0) throw ConfigError("train.eval_every / checkpoint_every must be >= 0");
}

void ModelConfig::validate() const {
  generator.validate();
  discriminator.validate();
  weights.validate();
  cx.validate();
  train.validate();
  if (discriminator.resolution != generator.resolution || discriminator.channels != generator.channels) {
    throw ConfigError("discriminator resolution/channels must match the generator");
  }
}

// ---------------------------------------------------------------------------

StepBatch collate(const std::vector<TrainingSample>& samples, torch::Dtype dtype) {
  if (samples.empty()) throw ConfigError("cannot collate an empty batch");
  std::vector<torch::Tensor> content, styles, target, target_gray, cx_target, paired, real;
  bool any_paired = false;
  for (const auto& s : samples) any_paired = any_paired || s.paired;
  for (const auto& s : samples) {
    if (s.style_refs.sampled.empty()) throw ConfigError("training sample has no style references");
    content.push_back(s.content.pixels);
    styles.push_back(stack_style_images(s.style_refs.sampled));
    const auto& fallback = s.style_refs.sampled.front().pixels;
    if (s.paired) {
      target.push_back(s.target->pixels);
      cx_target.push_back(s.target->pixels);
      real.push_back(s.target->pixels);
    } else {
      target.push_back(torch::zeros_like(s.content.pixels));
      cx_target.push_back(fallback);
      if (!any_paired) real.push_back(fallback);
    }
    paired.push_back(torch::full({1}, s.paired ? 1.0 : 0.0, torch::kFloat64));
  }
  StepBatch b;
  b.content = torch::stack(content).to(dtype);
  b.styles = torch::stack(styles).to(dtype);
  b.target = torch::stack(target).to(dtype);
  b.target_gray = to_grayscale(b.target);
  b.paired = torch::cat(paired).to(dtype);
  b.cx_target = torch::stack(cx_target).to(dtype);
  b.cx_target_gray = to_grayscale(b.cx_target);
  b.real = torch::stack(real).to(dtype);
  b.real_gray = to_grayscale(b.real);
  return b;
}

std::string step_record_json(const StepResult& r) {
  ordered_json j;
  j["step"] = r.step;
  j["stage"] = r.stage == Stage::train ? "train" : "finetune";
  ordered_json terms;
  for (const auto& [k, v] : r.generator.terms) terms[k] = v;
  j["terms"] = terms;
  j["g_total"] = r.generator.total;
  j["d_sha"] = r.d_sha;
  j["d_tex"] = r.d_tex;
  j["d_local"] = r.d_local;
  j["l1_unweighted"] = r.l1_unweighted;
  j["paired"] = r.paired;
  return j.dump();
}

// ---------------------------------------------------------------------------

namespace {

torch::optim::AdamOptions adam_options(const TrainConfig& t) {
  return torch::optim::AdamOptions(t.lr).betas({t.beta1, t.beta2});
}

std::string save_optimizer(const torch::optim::Optimizer& opt) {
  torch::serialize::OutputArchive archive;
  opt.save(archive);
  std::ostringstream out;
  archive.save_to(out);
  return out.str();
}

void load_optimizer(torch::optim::Optimizer& opt, const std::string& blob) {
  torch::serialize::InputArchive archive;
  std::istringstream in(blob);
  archive.load_from(in);
  opt.load(archive);
}

std::string dtype_tag(torch::Dtype d) { return d == torch::kFloat64 ? "f64" : "f32"; }

}  // namespace

Trainer::Trainer(const ModelConfig& config, torch::Dtype dtype) : config_(config), dtype_(dtype) {
  config_.validate();
  if (config_.train.deterministic) at::globalContext().setDeterministicAlgorithms(true, false);
  torch::manual_seed(config_.train.seed);
  generator_ = Generator(config_.generator);
  discriminators_ = std::make_unique<Discriminators>(config_.discriminator);
  generator_->to(dtype_);
  discriminators_->to(dtype_);
  extractor_ = make_extractor(config_.cx);
  opt_g_ = std::make_unique<torch::optim::Adam>(generator_->parameters(), adam_options(config_.train));
  opt_d_ = std::make_unique<torch::optim::Adam>(discriminators_->parameters(), adam_options(config_.train));
  rng_.seed(config_.train.seed * 0x9e3779b97f4a7c15ULL + 1);
}

void Trainer::check_finite(const std::vector<std::pair<std::string, double>>& values) {
  for (const auto& [name, v] : values) {
    if (std::isfinite(v)) continue;
    fs::path dir = snapshot_dir_.empty() ? fs::temp_directory_path() : snapshot_dir_;
    fs::path snapshot = dir / ("nonfinite-step-" + std::to_string(step_ + 1) + ".ckpt");
    std::string where = snapshot.string();
    try {
      save(snapshot);
    } catch (const std::exception& e) {
      where = std::string("<snapshot failed: ") + e.what() + ">";
    }
    throw NonFiniteLossError("non-finite loss term '" + name + "' at step " + std::to_string(step_ + 1) +
                                 "; snapshot: " + where,
                             where);
  }
}

namespace {

torch::Tensor synthesized_patches(const torch::Tensor& y, const torch::Tensor& y_gray,
                                  const std::vector<PatchOffset>& offsets, const DiscriminatorConfig& dc) {
  auto patches = cut_patches(y, offsets, dc.patch_size, Provenance::synthesized).patches;
  if (!dc.include_gray_patches) return patches;
  auto gray = y_gray.size(1) == dc.channels ? y_gray : y_gray.repeat({1, dc.channels, 1, 1});
  return torch::cat({patches, cut_patches(gray, offsets, dc.patch_size, Provenance::synthesized).patches});
}

}  // namespace

GeneratorLoss Trainer::generator_loss(const StepBatch& batch, const GeneratorOutput& out,
                                      const std::vector<PatchOffset>& synth_offsets) {
  const auto& w = config_.weights;
  auto& d = *discriminators_;
  GeneratorLoss loss;
  auto adv = adv_g(d.shape_disc(out.y_gray), d.texture_disc(out.y), w);
  loss.adv_sha = adv.shape;
  loss.adv_tex = adv.texture;
  auto l1 = l1_term(out.y_gray, out.y, batch.target_gray, batch.target, w, batch.paired);
  loss.l1_gray = l1.gray;
  loss.l1_tex = l1.texture;
  auto cx = cx_loss(out.y_gray, out.y, batch.cx_target_gray, batch.cx_target, *extractor_, config_.cx, w);
  loss.cx_gray = cx.gray;
  loss.cx_tex = cx.texture;
  auto p_y = synthesized_patches(out.y, out.y_gray, synth_offsets, config_.discriminator);
  loss.local = local_loss_g(d.local_disc(p_y), w);
  return loss;
}

StepResult Trainer::step(const std::vector<TrainingSample>& samples) { return step(collate(samples, dtype_)); }

StepResult Trainer::step(const StepBatch& batch) {
  const auto& dc = config_.discriminator;
  auto& d = *discriminators_;
  const int64_t b = batch.content.size(0);

  auto out = generator_->forward(batch.content, batch.styles);
  const auto synth_offsets = sample_patch_offsets(b, dc.patches_per_image, dc.resolution, dc.patch_size, rng_);
  const auto real_offsets =
      sample_patch_offsets(batch.real.size(0), dc.patches_per_image, dc.resolution, dc.patch_size, rng_);

  StepResult result;
  result.stage = config_.train.stage;

  // Discriminator phase: G output is detached, so only D parameters move.
  d.set_requires_grad(true);
  const auto y_gray_d = out.y_gray.detach();
  const auto y_d = out.y.detach();
  const auto p_real = cut_patches(batch.real, real_offsets, dc.patch_size);
  const auto p_blur = blur_patches(p_real, dc.blur_sigma, dc.blur_kernel);
  const auto p_y_d = synthesized_patches(y_d, y_gray_d, synth_offsets, dc);
  for (int64_t k = 0; k < config_.train.d_steps_per_g; ++k) {
    auto d_sha = adv_d_shape(d.shape_disc(batch.real_gray), d.shape_disc(y_gray_d));
    auto d_tex = adv_d_texture(d.texture_disc(batch.real), d.texture_disc(y_d));
    auto d_local = local_loss_d(d.local_disc(p_real.patches), d.local_disc(p_blur.patches), d.local_disc(p_y_d));
    result.d_sha = d_sha.item<double>();
    result.d_tex = d_tex.item<double>();
    result.d_local = d_local.item<double>();
    check_finite({{"d_sha", result.d_sha}, {"d_tex", result.d_tex}, {"d_local", result.d_local}});
    opt_d_->zero_grad();
    (-(d_sha + d_tex + d_local)).backward();
    opt_d_->step();
  }

  // Generator phase against the updated, frozen discriminators.
  d.set_requires_grad(false);
  auto loss = generator_loss(batch, out, synth_offsets);
  result.generator.terms = {{"adv_sha", loss.adv_sha.item<double>()}, {"adv_tex", loss.adv_tex.item<double>()},
                            {"l1_gray", loss.l1_gray.item<double>()}, {"l1_tex", loss.l1_tex.item<double>()},
                            {"cx_gray", loss.cx_gray.item<double>()}, {"cx_tex", loss.cx_tex.item<double>()},
                            {"local", loss.local.item<double>()}};
  for (const auto& [_, v] : result.generator.terms) result.generator.total += v;
  try {
    check_finite(result.generator.terms);
  } catch (...) {
    d.set_requires_grad(true);
    throw;
  }
  opt_g_->zero_grad();
  loss.total().backward();
  opt_g_->step();
  d.set_requires_grad(true);

  {
    torch::NoGradGuard no_grad;
    const double n_paired = batch.paired.sum().item<double>();
    result.paired = static_cast<int64_t>(n_paired);
    if (n_paired > 0) {
      auto per = (y_d - batch.target).abs().flatten(1).mean(1);
      result.l1_unweighted = ((per * batch.paired).sum() / n_paired).item<double>();
    }
  }
  result.step = ++step_;
  return result;
}

void Trainer::save(const fs::path& path) const {
  TensorArchive archive;
  std::ostringstream rng_text;
  rng_text << rng_;
  ordered_json meta;
  meta["kind"] = "gasnext-checkpoint";
  meta["config"] = model_config_to_json(config_);
  meta["step"] = step_;
  meta["rng"] = rng_text.str();
  meta["dtype"] = dtype_tag(dtype_);
  archive.metadata = meta.dump();
  export_parameters(*generator_, "generator", archive);
  export_parameters(*discriminators_->shape, "d_sha", archive);
  export_parameters(*discriminators_->texture, "d_tex", archive);
  export_parameters(*discriminators_->local, "d_local", archive);
  archive.blobs["opt_g"] = save_optimizer(*opt_g_);
  archive.blobs["opt_d"] = save_optimizer(*opt_d_);
  write_archive(path, archive);
}

Trainer Trainer::load(const fs::path& path, const std::optional<ModelConfig>& expected) {
  const auto archive = read_archive(path);
  ordered_json meta;
  try {
    meta = ordered_json::parse(archive.metadata);
  } catch (const ordered_json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  if (meta.value("kind", std::string{}) != "gasnext-checkpoint") {
    throw CheckpointError("'" + path.string() + "' is not a trainer checkpoint");
  }
  ModelConfig config = model_config_from_json(meta.at("config"));
  if (expected) {
    if (!(expected->generator == config.generator)) {
      throw CheckpointError("checkpoint generator config does not match the requested config");
    }
    if (!(expected->discriminator == config.discriminator)) {
      throw CheckpointError("checkpoint discriminator config does not match the requested config");
    }
    // Objective and optimizer settings may change between stages.
    config.weights = expected->weights;
    config.cx = expected->cx;
    config.train = expected->train;
  }
  const torch::Dtype dtype = meta.value("dtype", std::string{"f32"}) == "f64" ? torch::kFloat64 : torch::kFloat32;
  Trainer trainer(config, dtype);
  import_parameters(*trainer.generator_, "generator", archive);
  import_parameters(*trainer.discriminators_->shape, "d_sha", archive);
  import_parameters(*trainer.discriminators_->texture, "d_tex", archive);
  import_parameters(*trainer.discriminators_->local, "d_local", archive);
  for (const char* name : {"opt_g", "opt_d"}) {
    if (!archive.blobs.count(name)) throw CheckpointError(std::string("checkpoint lacks optimizer state ") + name);
  }
  load_optimizer(*trainer.opt_g_, archive.blobs.at("opt_g"));
  load_optimizer(*trainer.opt_d_, archive.blobs.at("opt_d"));
  if (expected) {
    // Keep restored moments, apply possibly changed hyper-parameters.
    for (auto* opt : {trainer.opt_g_.get(), trainer.opt_d_.get()}) {
      for (auto& group : opt->param_groups()) {
        auto& o = static_cast<torch::optim::AdamOptions&>(group.options());
        o.lr(config.train.lr).betas({config.train.beta1, config.train.beta2});
      }
    }
  }
  std::istringstream rng_text(meta.at("rng").get<std::string>());
  rng_text >> trainer.rng_;
  trainer.step_ = meta.at("step").get<int64_t>();
  return trainer;
}

// ---------------------------------------------------------------------------

std::vector<StepResult> run_training(Trainer& trainer, const CorpusIndex& index, const LoopOptions& options) {
  const auto& cfg = trainer.config();
  BatchRequest request;
  request.batch = static_cast<size_t>(cfg.train.batch_size);
  request.stage = options.stage;
  request.finetune_style = options.finetune_style;
  request.references = options.references;
  request.m = static_cast<size_t>(cfg.generator.m_default);
  if (options.stage == Stage::finetune) {
    if (options.references.empty()) throw ConfigError("fine-tuning needs at least one reference glyph (n = 0)");
    // m <= n: with fewer references than m_default, use them all.
    request.m = std::min(request.m, options.references.size());
  }
  if (!options.checkpoint_dir.empty()) trainer.set_snapshot_dir(options.checkpoint_dir);

  std::vector<StepResult> results;
  results.reserve(static_cast<size_t>(options.steps));
  for (int64_t s = 0; s < options.steps; ++s) {
    auto samples = batch_samples(index, request, trainer.rng());
    auto result = trainer.step(samples);
    result.stage = options.stage;
    if (options.log) *options.log << step_record_json(result) << "\n" << std::flush;
    if (options.on_step) options.on_step(result);
    if (!options.checkpoint_dir.empty() && cfg.train.checkpoint_every > 0 &&
        trainer.step_count() % cfg.train.checkpoint_every == 0) {
      trainer.save(options.checkpoint_dir / ("step-" + std::to_string(trainer.step_count()) + ".ckpt"));
    }
    results.push_back(std::move(result));
  }
  if (!options.checkpoint_dir.empty()) trainer.save(options.checkpoint_dir / "last.ckpt");
  return results;
}

std::vector<StepResult> finetune(Trainer& trainer, const CorpusIndex& index, const std::vector<GlyphImage>& references,
                                 int64_t steps, const LoopOptions& options) {
  if (references.empty()) throw ConfigError("fine-tuning needs at least one reference glyph (n = 0)");
  LoopOptions opts = options;
  opts.stage = Stage::finetune;
  opts.references = references;
  opts.steps = steps;
  return run_training(trainer, index, opts);
}

// ---------------------------------------------------------------------------

namespace {

GeneratorOutput generate_one(Trainer& trainer, const GlyphImage& content, const std::vector<GlyphImage>& refs) {
  torch::NoGradGuard no_grad;
  auto out = trainer.generator()->generate(content, refs);
  return {out.y_gray.to(torch::kFloat32), out.y.to(torch::kFloat32)};
}

std::vector<GlyphImage> draw_refs(const std::vector<GlyphImage>& pool, const std::string& exclude, size_t m, Rng& rng) {
  std::vector<GlyphImage> candidates;
  for (const auto& g : pool) {
    if (g.codepoint != exclude || pool.size() <= m) candidates.push_back(g);
  }
  return sample_style_refs(candidates, std::min(m, candidates.size()), rng);
}

}  // namespace

MetricReport evaluate_checkpoint(Trainer& trainer, const CorpusIndex& index, const std::vector<EvalSample>& split,
                                 const fs::path& out_dir, uint64_t seed, const EvalConfig& eval) {
  if (split.empty()) throw ConfigError("evaluation split is empty");
  Rng rng(seed);
  const size_t m = static_cast<size_t>(trainer.config().generator.m_default);
  for (const auto& sample : split) {
    std::vector<GlyphImage> pool;
    for (const auto& [_, g] : index.styles().at(sample.style_id)) pool.push_back(g);
    auto refs = draw_refs(pool, sample.codepoint, m, rng);
    auto out = generate_one(trainer, index.content_glyph(sample.codepoint), refs);
    const fs::path rel = fs::path(sample.style_id) / (sample.codepoint + ".png");
    save_glyph(out_dir / "generated" / rel, out.y[0]);
    save_glyph(out_dir / "truth" / rel, index.style_glyph(sample.style_id, sample.codepoint).pixels);
  }
  auto report = evaluate_set(out_dir / "generated", out_dir / "truth", eval);
  write_report(out_dir, report);
  return report;
}

MetricReport evaluate_references(Trainer& trainer, const CorpusIndex& index, const std::vector<GlyphImage>& pool,
                                 const fs::path& out_dir, uint64_t seed, const EvalConfig& eval) {
  if (pool.empty()) throw ConfigError("reference pool is empty");
  Rng rng(seed);
  const size_t m = static_cast<size_t>(trainer.config().generator.m_default);
  for (const auto& ref : pool) {
    auto refs = draw_refs(pool, ref.codepoint, m, rng);
    auto out = generate_one(trainer, index.content_glyph(ref.codepoint), refs);
    save_glyph(out_dir / "generated" / (ref.codepoint + ".png"), out.y[0]);
    save_glyph(out_dir / "truth" / (ref.codepoint + ".png"), ref.pixels);
  }
  auto report = evaluate_set(out_dir / "generated", out_dir / "truth", eval);
  write_report(out_dir, report);
  return report;
}

double reference_l1(Trainer& trainer, const CorpusIndex& index, const std::vector<GlyphImage>& pool, uint64_t seed) {
  if (pool.empty()) throw ConfigError("reference pool is empty");
  Rng rng(seed);
  const size_t m = static_cast<size_t>(trainer.config().generator.m_default);
  double total = 0.0;
  for (const auto& ref : pool) {
    auto refs = sample_style_refs(pool, std::min(m, pool.size()), rng);
    auto out = generate_one(trainer, index.content_glyph(ref.codepoint), refs);
    total += (out.y[0] - ref.pixels).abs().mean().item<double>();
  }
  return total / static_cast<double>(pool.size());
}

}  // namespace gasnext
