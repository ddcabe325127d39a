#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gasnext/metrics.hpp"
#include "gasnext/trainer.hpp"

namespace gasnext {

/// Full description of a run, serializable as JSON:
///
///   { "corpus": ..., "output_dir": ..., "generator": {...},
///     "discriminator": {...}, "loss_weights": {...}, "cx": {...},
///     "train": {...}, "ssim": {...}, "eval": {...} }
///
/// Unknown keys are rejected by name. Discriminator resolution and channels
/// follow the generator and are not separate keys.
struct RunConfig {
  std::string corpus;
  std::string output_dir = "runs/default";
  ModelConfig model;
  EvalConfig eval;

  void validate() const;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);

struct ConfigKeyDoc {
  std::string key;  // dotted path, e.g. "loss_weights.l1_gray"
  std::string default_value;
  std::string description;
};

/// One entry per config key, in file order.
std::vector<ConfigKeyDoc> config_key_docs();
std::string config_help_text();

/// Applies "section.key=value" overrides (value parsed as JSON, falling back
/// to a string). Unknown keys throw ConfigError.
void apply_override(RunConfig& config, const std::string& assignment);
/// Applies several overrides and validates once at the end, so their order
/// does not matter (e.g. resolution and patch size changed together).
void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments);

}  // namespace gasnext
