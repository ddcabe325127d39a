// gasnext: prepare | train | finetune | generate | eval
//
// Exit codes: 0 success, 1 usage or config error, 2 runtime failure.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include <CLI11.hpp>
#include "gasnext/config.hpp"
#include "gasnext/corpus.hpp"
#include "gasnext/error.hpp"
#include "gasnext/metrics.hpp"
#include "gasnext/trainer.hpp"

namespace fs = std::filesystem;
using namespace gasnext;

namespace {

// Relative output paths land under $GASNEXT_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& p) {
  fs::path path(p);
  const char* root = std::getenv("GASNEXT_OUTPUT_ROOT");
  if (root && *root && path.is_relative()) return fs::path(root) / path;
  return path;
}

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string corpus;
  std::string out;
  std::optional<int64_t> steps;
  std::optional<uint64_t> seed;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides, "override a config key, e.g. --set loss_weights.l1_tex=50");
  cmd->add_option("--corpus", args.corpus, "corpus root (overrides 'corpus')");
  cmd->add_option("-o,--out", args.out, "run directory (overrides 'output_dir')");
  cmd->add_option("--steps", args.steps, "training steps (overrides 'train.steps')");
  cmd->add_option("--seed", args.seed, "seed (overrides 'train.seed')");
}

// Precedence: defaults (or a checkpoint's settings) < config file < --set <
// dedicated flags.
RunConfig resolve_config(const ConfigArgs& args, RunConfig base = {}) {
  RunConfig cfg = args.config_path.empty() ? std::move(base) : load_run_config(args.config_path);
  apply_overrides(cfg, args.overrides);
  if (!args.corpus.empty()) cfg.corpus = args.corpus;
  if (!args.out.empty()) cfg.output_dir = args.out;
  if (args.steps) cfg.model.train.steps = *args.steps;
  if (args.seed) cfg.model.train.seed = *args.seed;
  cfg.validate();
  return cfg;
}

CorpusIndex open_corpus(const RunConfig& cfg) {
  if (cfg.corpus.empty()) throw ConfigError("no corpus given (set 'corpus' or pass --corpus)");
  return load_corpus(cfg.corpus, {cfg.model.generator.resolution, cfg.model.generator.channels});
}

// Continuing from a checkpoint starts from the settings it was trained with.
RunConfig checkpoint_defaults(const std::string& checkpoint) {
  RunConfig cfg;
  cfg.model = Trainer::load(checkpoint).config();
  cfg.eval.resolution = cfg.model.generator.resolution;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text << "\n";
  if (!out) throw DataError("cannot write '" + path.string() + "'");
}

// Samples for periodic evaluation: unseen styles and content when the
// manifest declares them, otherwise the training pairs.
std::vector<EvalSample> eval_split(const CorpusIndex& index) {
  std::vector<EvalSample> split;
  const auto& s = index.splits();
  for (const auto& style : s.unseen_style) {
    for (const auto& cp : index.codepoints(style)) split.push_back({style, cp});
  }
  for (const auto& style : index.training_styles()) {
    for (const auto& cp : s.unseen_content) {
      if (index.has_style_glyph(style, cp)) split.push_back({style, cp});
    }
  }
  if (split.empty()) {
    for (const auto& style : index.training_styles()) {
      for (const auto& cp : index.training_content()) {
        if (index.has_style_glyph(style, cp)) split.push_back({style, cp});
      }
    }
  }
  if (split.size() > 64) split.resize(64);
  return split;
}

LoopOptions loop_options(const RunConfig& cfg, const CorpusIndex& index, Trainer& trainer, const fs::path& out,
                         std::ostream& log) {
  LoopOptions opts;
  opts.log = &log;
  opts.checkpoint_dir = out / "checkpoints";
  fs::create_directories(opts.checkpoint_dir);
  const int64_t every = cfg.model.train.eval_every;
  if (every > 0) {
    auto split = eval_split(index);
    opts.on_step = [&trainer, &index, split, out, every, cfg](const StepResult& r) {
      if (r.step % every != 0) return;
      auto report = evaluate_checkpoint(trainer, index, split, out / "eval" / ("step-" + std::to_string(r.step)),
                                        cfg.model.train.seed, cfg.eval);
      std::cerr << "step " << r.step << ": " << report_json(report) << "\n";
    };
  }
  return opts;
}

int cmd_prepare(const std::string& out, const SyntheticCorpusOptions& opts) {
  const fs::path root = output_path(out);
  make_synthetic_corpus(root, opts);
  auto index = load_corpus(root, {opts.resolution, 1});
  size_t style_images = 0;
  for (const auto& [_, glyphs] : index.styles()) style_images += glyphs.size();
  std::cout << "corpus " << root.string() << ": " << index.content().size() << " content glyphs, "
            << index.styles().size() << " styles, " << style_images << " style glyphs, " << opts.resolution << "x"
            << opts.resolution << "\n";
  return 0;
}

int cmd_train(const ConfigArgs& args, const std::string& resume) {
  RunConfig cfg = resolve_config(args, resume.empty() ? RunConfig{} : checkpoint_defaults(resume));
  cfg.model.train.stage = Stage::train;
  const fs::path out = output_path(cfg.output_dir);
  auto index = open_corpus(cfg);
  fs::create_directories(out);
  write_text(out / "config.json", run_config_to_json(cfg));

  Trainer trainer = resume.empty() ? Trainer(cfg.model) : Trainer::load(resume, cfg.model);
  const int64_t remaining = cfg.model.train.steps - trainer.step_count();
  if (remaining <= 0) {
    std::cout << "checkpoint already at step " << trainer.step_count() << "; nothing to do\n";
    return 0;
  }
  std::ofstream log(out / "log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  auto opts = loop_options(cfg, index, trainer, out, log);
  opts.steps = remaining;
  opts.stage = Stage::train;
  auto results = run_training(trainer, index, opts);
  std::cout << "trained " << results.size() << " steps (now at " << trainer.step_count() << "); last l1 "
            << results.back().l1_unweighted << "\ncheckpoint " << (opts.checkpoint_dir / "last.ckpt").string()
            << "\n";
  return 0;
}

int cmd_finetune(const ConfigArgs& args, const std::string& checkpoint, const std::string& style_dir,
                 const std::string& style_id) {
  RunConfig cfg = resolve_config(args, checkpoint_defaults(checkpoint));
  cfg.model.train.stage = Stage::finetune;
  if (args.out.empty()) cfg.output_dir = (fs::path(cfg.output_dir) / "finetune").string();
  const fs::path out = output_path(cfg.output_dir);
  auto index = open_corpus(cfg);
  auto refs = load_reference_dir(style_dir, {cfg.model.generator.resolution, cfg.model.generator.channels});
  fs::create_directories(out);
  write_text(out / "config.json", run_config_to_json(cfg));

  Trainer trainer = Trainer::load(checkpoint, cfg.model);
  const fs::path log_path = out / "log.jsonl";
  std::ofstream log(log_path, std::ios::app);
  auto opts = loop_options(cfg, index, trainer, out, log);
  opts.finetune_style = style_id;
  const double before = reference_l1(trainer, index, refs, cfg.model.train.seed);
  auto results = finetune(trainer, index, refs, cfg.model.train.steps, opts);
  const double after = reference_l1(trainer, index, refs, cfg.model.train.seed);
  std::cout << "fine-tuned " << results.size() << " steps on " << refs.size() << " references; reference l1 "
            << before << " -> " << after << "\ncheckpoint " << (opts.checkpoint_dir / "last.ckpt").string() << "\n";
  return 0;
}

std::vector<fs::path> png_files(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".png") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(in)) {
      files.emplace_back(in);
    } else {
      throw DataError("cannot read content input '" + in + "'");
    }
  }
  if (files.empty()) throw DataError("no content glyphs found");
  return files;
}

int cmd_generate(const std::string& checkpoint, const std::vector<std::string>& content, const std::string& style_dir,
                 std::optional<int64_t> m_arg, uint64_t seed, const std::string& out_arg, bool grid) {
  Trainer trainer = Trainer::load(checkpoint);
  const auto& gc = trainer.config().generator;
  const CorpusConfig cc{gc.resolution, gc.channels};
  auto pool = load_reference_dir(style_dir, cc);
  const int64_t m = m_arg.value_or(gc.m_default);
  if (m < 1 || static_cast<size_t>(m) > pool.size()) {
    throw ConfigError("m = " + std::to_string(m) + " but the style directory has " + std::to_string(pool.size()) +
                      " images");
  }
  const fs::path out = output_path(out_arg);
  fs::create_directories(out / "glyphs");

  Rng rng(seed);
  std::vector<torch::Tensor> rows;
  size_t written = 0;
  torch::NoGradGuard no_grad;
  for (const auto& file : png_files(content)) {
    GlyphImage glyph = load_glyph(file, gc.channels, file.stem().string());
    if (glyph.height() != gc.resolution || glyph.width() != gc.resolution) {
      glyph.pixels = resize_square(glyph.pixels, gc.resolution);
    }
    auto refs = sample_style_refs(pool, static_cast<size_t>(m), rng);
    auto y = trainer.generator()->generate(glyph, refs).y[0].to(torch::kFloat32);
    save_glyph(out / "glyphs" / (glyph.codepoint + ".png"), y);
    ++written;
    if (grid) {
      std::vector<torch::Tensor> row{glyph.pixels};
      for (const auto& r : refs) row.push_back(r.pixels);
      row.push_back(y);
      rows.push_back(torch::cat(row, 2));
    }
  }
  if (grid) save_glyph(out / "grid.png", torch::cat(rows, 1));
  std::cout << "wrote " << written << " glyphs to " << (out / "glyphs").string()
            << (grid ? " and grid.png" : "") << "\n";
  return 0;
}

int cmd_eval(const std::string& generated, const std::string& truth, const ConfigArgs& args) {
  RunConfig cfg = resolve_config(args);
  auto report = evaluate_set(generated, truth, cfg.eval);
  if (!args.out.empty()) write_report(output_path(args.out), report);
  std::cout << report_table(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot glyph style transfer: corpus preparation, training, generation, evaluation"};
  app.require_subcommand(1);
  app.footer("Relative output paths are placed under $GASNEXT_OUTPUT_ROOT when it is set.");
  const std::string keys = config_help_text();

  SyntheticCorpusOptions synth;
  std::string prepare_out = "corpus";
  auto* prepare = app.add_subcommand("prepare", "write a synthetic corpus");
  prepare->add_option("-o,--out", prepare_out, "corpus root")->capture_default_str();
  prepare->add_option("--styles", synth.styles, "number of styles")->capture_default_str();
  prepare->add_option("--glyphs", synth.glyphs, "glyphs per style")->capture_default_str();
  prepare->add_option("--resolution", synth.resolution, "glyph size in pixels")->capture_default_str();
  prepare->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  prepare->add_option("--unseen-styles", synth.unseen_styles, "declare the last k styles unseen")
      ->capture_default_str();
  prepare->add_flag("--identity-style", synth.identity_style, "add a style drawn in the content font");
  prepare->footer(keys);

  ConfigArgs train_args;
  std::string resume;
  auto* train = app.add_subcommand("train", "train from scratch or resume");
  add_config_options(train, train_args);
  train->add_option("--resume", resume, "continue from a checkpoint up to train.steps")->check(CLI::ExistingFile);
  train->footer(keys);

  ConfigArgs ft_args;
  std::string ft_checkpoint, ft_style_dir, ft_style_id = "finetune";
  auto* ft = app.add_subcommand("finetune", "adapt a trained checkpoint to a new style's few references");
  add_config_options(ft, ft_args);
  ft->add_option("--checkpoint", ft_checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--style-dir", ft_style_dir, "directory of reference glyphs <codepoint>.png")
      ->required()
      ->check(CLI::ExistingDirectory);
  ft->add_option("--style-id", ft_style_id, "name of the new style")->capture_default_str();
  ft->footer(keys);

  std::string gen_checkpoint, gen_style_dir, gen_out = "generated";
  std::vector<std::string> gen_content;
  std::optional<int64_t> gen_m;
  uint64_t gen_seed = 0;
  bool no_grid = false;
  auto* gen = app.add_subcommand("generate", "render content glyphs in a reference style");
  gen->add_option("--checkpoint", gen_checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  gen->add_option("--content", gen_content, "content PNGs or directories")->required();
  gen->add_option("--style-dir", gen_style_dir, "directory of style reference PNGs")
      ->required()
      ->check(CLI::ExistingDirectory);
  gen->add_option("-m", gen_m, "style references per glyph (default generator.m_default)");
  gen->add_option("--seed", gen_seed, "reference sampling seed")->capture_default_str();
  gen->add_option("-o,--out", gen_out, "output directory (glyphs/ and grid.png)")->capture_default_str();
  gen->add_flag("--no-grid", no_grid, "skip the contact sheet");
  gen->footer(keys);

  ConfigArgs eval_args;
  std::string eval_generated, eval_truth;
  auto* eval = app.add_subcommand("eval", "score generated glyphs against ground truth");
  eval->add_option("--generated", eval_generated, "generated PNG directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--truth", eval_truth, "ground-truth PNG directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("-c,--config", eval_args.config_path, "JSON run config (ssim / eval sections)")
      ->check(CLI::ExistingFile);
  eval->add_option("--set", eval_args.overrides, "override a config key");
  eval->add_option("-o,--out", eval_args.out, "write report.json and report.txt here");
  eval->footer(keys);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*prepare) return cmd_prepare(prepare_out, synth);
    if (*train) return cmd_train(train_args, resume);
    if (*ft) return cmd_finetune(ft_args, ft_checkpoint, ft_style_dir, ft_style_id);
    if (*gen) return cmd_generate(gen_checkpoint, gen_content, gen_style_dir, gen_m, gen_seed, gen_out, !no_grid);
    if (*eval) return cmd_eval(eval_generated, eval_truth, eval_args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NonFiniteLossError& e) {
    std::cerr << "error: " << e.what() << "\nsnapshot written to " << e.snapshot_path() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
