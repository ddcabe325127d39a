#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "gasnext/corpus.hpp"
#include "gasnext/discriminators.hpp"
#include "gasnext/generator.hpp"
#include "gasnext/losses.hpp"
#include "gasnext/metrics.hpp"

namespace gasnext {

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int64_t batch_size = 8;
  int64_t steps = 1000;
  int64_t d_steps_per_g = 1;
  uint64_t seed = 0;
  Stage stage = Stage::train;
  int64_t eval_every = 0;        // 0 disables periodic evaluation
  int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  bool deterministic = true;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Everything that shapes the networks and the objective.
struct ModelConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  LossWeights weights;
  CxConfig cx;
  TrainConfig train;

  void validate() const;
};

/// Collated batch tensors, all [B, ...].
struct StepBatch {
  torch::Tensor content;      // [B, C, R, R]
  torch::Tensor styles;       // [B, m, C, R, R]
  torch::Tensor target;       // zeros where unpaired
  torch::Tensor target_gray;  // [B, 1, R, R]
  torch::Tensor paired;       // [B] 0/1
  // CX compares against the target, or a style reference when unpaired.
  torch::Tensor cx_target;
  torch::Tensor cx_target_gray;
  // Real examples for the discriminators: paired targets, or style references
  // when the batch has no paired sample.
  torch::Tensor real;
  torch::Tensor real_gray;
};

StepBatch collate(const std::vector<TrainingSample>& samples, torch::Dtype dtype = torch::kFloat32);

/// Weighted generator-side terms as tensors (graph attached).
struct GeneratorLoss {
  torch::Tensor adv_sha, adv_tex, l1_gray, l1_tex, cx_gray, cx_tex, local;
  torch::Tensor total() const { return adv_sha + adv_tex + l1_gray + l1_tex + cx_gray + cx_tex + local; }
};

struct StepResult {
  int64_t step = 0;
  Stage stage = Stage::train;
  LossBreakdown generator;  // adv_sha, adv_tex, l1_gray, l1_tex, cx_gray, cx_tex, local
  double d_sha = 0.0;       // discriminator objectives (maximized)
  double d_tex = 0.0;
  double d_local = 0.0;
  double l1_unweighted = 0.0;  // mean |y - target| over paired samples
  int64_t paired = 0;
};

/// One JSON object per line.
std::string step_record_json(const StepResult& result);

/// Owns G, the three discriminators, both optimizers, and the sampling RNG.
class Trainer {
 public:
  explicit Trainer(const ModelConfig& config, torch::Dtype dtype = torch::kFloat32);

  /// D phase (ascend the shape, texture and local objectives with G fixed)
  /// then G phase (descend adv + L1 + CX + local with D fixed).
  StepResult step(const std::vector<TrainingSample>& samples);
  StepResult step(const StepBatch& batch);

  /// Generator objective at fixed patch offsets; used by step() and by
  /// gradient checks that need a deterministic loss surface.
  GeneratorLoss generator_loss(const StepBatch& batch, const GeneratorOutput& out,
                               const std::vector<PatchOffset>& synth_offsets);

  void save(const std::filesystem::path& path) const;
  /// Restores a checkpoint. When `expected` is given, its generator and
  /// discriminator configs must match the stored ones.
  static Trainer load(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = std::nullopt);

  const ModelConfig& config() const { return config_; }
  int64_t step_count() const { return step_; }
  Rng& rng() { return rng_; }
  Generator& generator() { return generator_; }
  Discriminators& discriminators() { return *discriminators_; }
  PerceptualExtractor& extractor() { return *extractor_; }
  torch::Dtype dtype() const { return dtype_; }

  void set_weights(const LossWeights& w) { config_.weights = w; }
  void set_snapshot_dir(std::filesystem::path dir) { snapshot_dir_ = std::move(dir); }

 private:
  void check_finite(const std::vector<std::pair<std::string, double>>& values);

  ModelConfig config_;
  torch::Dtype dtype_;
  Generator generator_{nullptr};
  std::unique_ptr<Discriminators> discriminators_;
  std::unique_ptr<PerceptualExtractor> extractor_;
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
  Rng rng_;
  int64_t step_ = 0;
  std::filesystem::path snapshot_dir_;
};

struct LoopOptions {
  int64_t steps = 1;
  Stage stage = Stage::train;
  std::string finetune_style = "finetune";
  std::vector<GlyphImage> references;          // fine-tuning pool R_s
  std::ostream* log = nullptr;                 // JSONL step records
  std::filesystem::path checkpoint_dir;        // periodic + final "last.ckpt"
  std::function<void(const StepResult&)> on_step;
};

/// Samples batches from `index` and runs `steps` trainer steps.
std::vector<StepResult> run_training(Trainer& trainer, const CorpusIndex& index, const LoopOptions& options);

/// Continues training on a new style's few references: batches mix paired
/// samples (reference codepoints) and unpaired ones whose L1 is zeroed.
std::vector<StepResult> finetune(Trainer& trainer, const CorpusIndex& index, const std::vector<GlyphImage>& references,
                                 int64_t steps, const LoopOptions& options = {});

struct EvalSample {
  std::string style_id;
  std::string codepoint;
};

/// Generates every eval sample (style refs drawn with `seed`), writes
/// generated and ground-truth PNGs under out_dir/{generated,truth}/<style>/
/// and returns the metric report (also written to out_dir).
MetricReport evaluate_checkpoint(Trainer& trainer, const CorpusIndex& index, const std::vector<EvalSample>& split,
                                 const std::filesystem::path& out_dir, uint64_t seed, const EvalConfig& eval = {});

/// Like evaluate_checkpoint, but style refs come from a fixed pool and the
/// ground truth is the pool glyph with the same codepoint.
MetricReport evaluate_references(Trainer& trainer, const CorpusIndex& index, const std::vector<GlyphImage>& pool,
                                 const std::filesystem::path& out_dir, uint64_t seed, const EvalConfig& eval = {});

/// Mean |y - target| of generated references against themselves, with style
/// refs sampled from the same pool; a cheap fine-tuning progress measure.
double reference_l1(Trainer& trainer, const CorpusIndex& index, const std::vector<GlyphImage>& pool, uint64_t seed);

}  // namespace gasnext
