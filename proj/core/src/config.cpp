#include "gasnext/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "config_json.hpp"
#include "gasnext/error.hpp"

namespace gasnext {

using nlohmann::ordered_json;

namespace {

void check_keys(const ordered_json& given, const ordered_json& known, const std::string& path) {
  if (!given.is_object()) throw ConfigError("config key '" + path + "' must be an object");
  for (const auto& [key, _] : given.items()) {
    if (!known.contains(key)) {
      throw ConfigError("unknown config key '" + (path.empty() ? key : path + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const ordered_json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const ordered_json::exception& e) {
    throw ConfigError("config key '" + path + "." + key + "' has the wrong type: " + e.what());
  }
}

std::string stage_name(Stage s) { return s == Stage::train ? "train" : "finetune"; }

Stage stage_from(const std::string& s, const std::string& path) {
  if (s == "train") return Stage::train;
  if (s == "finetune") return Stage::finetune;
  throw ConfigError("config key '" + path + "' must be 'train' or 'finetune', got '" + s + "'");
}

ordered_json to_json(const GeneratorConfig& c) {
  return {{"resolution", c.resolution},       {"channels", c.channels},
          {"base_width", c.base_width},       {"encoder_depth", c.encoder_depth},
          {"num_attention_levels", c.num_attention_levels}, {"style_vector_dim", c.style_vector_dim},
          {"m_default", c.m_default},         {"max_width", c.max_width},
          {"texture_branch", c.texture_branch}};
}

GeneratorConfig generator_from(const ordered_json& j, const std::string& path) {
  GeneratorConfig c;
  check_keys(j, to_json(c), path);
  read(j, "resolution", c.resolution, path);
  read(j, "channels", c.channels, path);
  read(j, "base_width", c.base_width, path);
  read(j, "encoder_depth", c.encoder_depth, path);
  read(j, "num_attention_levels", c.num_attention_levels, path);
  read(j, "style_vector_dim", c.style_vector_dim, path);
  read(j, "m_default", c.m_default, path);
  read(j, "max_width", c.max_width, path);
  read(j, "texture_branch", c.texture_branch, path);
  return c;
}

ordered_json to_json(const DiscriminatorConfig& c, bool with_shape) {
  ordered_json j;
  if (with_shape) {
    j["resolution"] = c.resolution;
    j["channels"] = c.channels;
  }
  j["patch_size"] = c.patch_size;
  j["patches_per_image"] = c.patches_per_image;
  j["blur_sigma"] = c.blur_sigma;
  j["blur_kernel"] = c.blur_kernel;
  j["base_width"] = c.base_width;
  j["include_gray_patches"] = c.include_gray_patches;
  return j;
}

DiscriminatorConfig discriminator_from(const ordered_json& j, const std::string& path, bool with_shape) {
  DiscriminatorConfig c;
  check_keys(j, to_json(c, with_shape), path);
  if (with_shape) {
    read(j, "resolution", c.resolution, path);
    read(j, "channels", c.channels, path);
  }
  read(j, "patch_size", c.patch_size, path);
  read(j, "patches_per_image", c.patches_per_image, path);
  read(j, "blur_sigma", c.blur_sigma, path);
  read(j, "blur_kernel", c.blur_kernel, path);
  read(j, "base_width", c.base_width, path);
  read(j, "include_gray_patches", c.include_gray_patches, path);
  return c;
}

ordered_json to_json(const LossWeights& w) {
  return {{"adv_sha", w.adv_sha}, {"adv_tex", w.adv_tex}, {"l1_gray", w.l1_gray}, {"l1_tex", w.l1_tex},
          {"cx_gray", w.cx_gray}, {"cx_tex", w.cx_tex},   {"local", w.local}};
}

LossWeights weights_from(const ordered_json& j, const std::string& path) {
  LossWeights w;
  check_keys(j, to_json(w), path);
  read(j, "adv_sha", w.adv_sha, path);
  read(j, "adv_tex", w.adv_tex, path);
  read(j, "l1_gray", w.l1_gray, path);
  read(j, "l1_tex", w.l1_tex, path);
  read(j, "cx_gray", w.cx_gray, path);
  read(j, "cx_tex", w.cx_tex, path);
  read(j, "local", w.local, path);
  return w;
}

ordered_json to_json(const CxConfig& c) {
  return {{"h", c.h},
          {"epsilon", c.epsilon},
          {"layers", c.layers},
          {"extractor", c.extractor},
          {"weights_path", c.weights_path},
          {"extractor_seed", c.extractor_seed}};
}

CxConfig cx_from(const ordered_json& j, const std::string& path) {
  CxConfig c;
  check_keys(j, to_json(c), path);
  read(j, "h", c.h, path);
  read(j, "epsilon", c.epsilon, path);
  read(j, "layers", c.layers, path);
  read(j, "extractor", c.extractor, path);
  read(j, "weights_path", c.weights_path, path);
  read(j, "extractor_seed", c.extractor_seed, path);
  return c;
}

ordered_json to_json(const TrainConfig& t) {
  return {{"lr", t.lr},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"batch_size", t.batch_size},
          {"steps", t.steps},
          {"d_steps_per_g", t.d_steps_per_g},
          {"seed", t.seed},
          {"stage", stage_name(t.stage)},
          {"eval_every", t.eval_every},
          {"checkpoint_every", t.checkpoint_every},
          {"deterministic", t.deterministic}};
}

TrainConfig train_from(const ordered_json& j, const std::string& path) {
  TrainConfig t;
  check_keys(j, to_json(t), path);
  read(j, "lr", t.lr, path);
  read(j, "beta1", t.beta1, path);
  read(j, "beta2", t.beta2, path);
  read(j, "batch_size", t.batch_size, path);
  read(j, "steps", t.steps, path);
  read(j, "d_steps_per_g", t.d_steps_per_g, path);
  read(j, "seed", t.seed, path);
  std::string stage = stage_name(t.stage);
  read(j, "stage", stage, path);
  t.stage = stage_from(stage, path + ".stage");
  read(j, "eval_every", t.eval_every, path);
  read(j, "checkpoint_every", t.checkpoint_every, path);
  read(j, "deterministic", t.deterministic, path);
  return t;
}

ordered_json to_json(const SsimConfig& s) {
  return {{"window", s.window}, {"sigma", s.sigma},           {"k1", s.k1},
          {"k2", s.k2},         {"data_range", s.data_range}, {"sample_covariance", s.sample_covariance}};
}

SsimConfig ssim_from(const ordered_json& j, const std::string& path) {
  SsimConfig s;
  check_keys(j, to_json(s), path);
  read(j, "window", s.window, path);
  read(j, "sigma", s.sigma, path);
  read(j, "k1", s.k1, path);
  read(j, "k2", s.k2, path);
  read(j, "data_range", s.data_range, path);
  read(j, "sample_covariance", s.sample_covariance, path);
  return s;
}

ordered_json eval_to_json(const EvalConfig& e) {
  return {{"pix_threshold", e.pix_threshold}, {"embedder_seed", e.embedder_seed}};
}

void eval_from(const ordered_json& j, const std::string& path, EvalConfig& e) {
  check_keys(j, eval_to_json(e), path);
  read(j, "pix_threshold", e.pix_threshold, path);
  read(j, "embedder_seed", e.embedder_seed, path);
}

ordered_json run_to_json(const RunConfig& c) {
  ordered_json j;
  j["corpus"] = c.corpus;
  j["output_dir"] = c.output_dir;
  j["generator"] = to_json(c.model.generator);
  j["discriminator"] = to_json(c.model.discriminator, false);
  j["loss_weights"] = to_json(c.model.weights);
  j["cx"] = to_json(c.model.cx);
  j["train"] = to_json(c.model.train);
  j["ssim"] = to_json(c.eval.ssim);
  j["eval"] = eval_to_json(c.eval);
  return j;
}

RunConfig run_from(const ordered_json& j) {
  RunConfig c;
  check_keys(j, run_to_json(c), "");
  read(j, "corpus", c.corpus, "");
  read(j, "output_dir", c.output_dir, "");
  if (j.contains("generator")) c.model.generator = generator_from(j.at("generator"), "generator");
  if (j.contains("discriminator")) {
    c.model.discriminator = discriminator_from(j.at("discriminator"), "discriminator", false);
  }
  c.model.discriminator.resolution = c.model.generator.resolution;
  c.model.discriminator.channels = c.model.generator.channels;
  if (j.contains("loss_weights")) c.model.weights = weights_from(j.at("loss_weights"), "loss_weights");
  if (j.contains("cx")) c.model.cx = cx_from(j.at("cx"), "cx");
  if (j.contains("train")) c.model.train = train_from(j.at("train"), "train");
  if (j.contains("ssim")) c.eval.ssim = ssim_from(j.at("ssim"), "ssim");
  if (j.contains("eval")) eval_from(j.at("eval"), "eval", c.eval);
  c.eval.resolution = c.model.generator.resolution;
  return c;
}

}  // namespace

ordered_json model_config_to_json(const ModelConfig& c) {
  return {{"generator", to_json(c.generator)},
          {"discriminator", to_json(c.discriminator, true)},
          {"loss_weights", to_json(c.weights)},
          {"cx", to_json(c.cx)},
          {"train", to_json(c.train)}};
}

ModelConfig model_config_from_json(const ordered_json& j) {
  ModelConfig c;
  try {
    c.generator = generator_from(j.at("generator"), "generator");
    c.discriminator = discriminator_from(j.at("discriminator"), "discriminator", true);
    c.weights = weights_from(j.at("loss_weights"), "loss_weights");
    c.cx = cx_from(j.at("cx"), "cx");
    c.train = train_from(j.at("train"), "train");
  } catch (const ordered_json::exception& e) {
    throw CheckpointError(std::string("checkpoint config is incomplete: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
  return c;
}

void RunConfig::validate() const {
  model.validate();
  if (eval.ssim.window < 1 || eval.ssim.window % 2 == 0) throw ConfigError("ssim.window must be odd");
  if (!(eval.ssim.data_range > 0.0)) throw ConfigError("ssim.data_range must be positive");
}

RunConfig parse_run_config(const std::string& json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const ordered_json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  auto c = run_from(j);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str());
}

std::string run_config_to_json(const RunConfig& config) { return run_to_json(config).dump(2); }

namespace {

void set_key(ordered_json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  ordered_json value;
  try {
    value = ordered_json::parse(text);
  } catch (const ordered_json::exception&) {
    value = text;
  }
  ordered_json* node = &j;
  std::stringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
  }
  *node = value;
}

}  // namespace

void apply_override(RunConfig& config, const std::string& assignment) { apply_overrides(config, {assignment}); }

void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments) {
  ordered_json j = run_to_json(config);
  for (const auto& a : assignments) set_key(j, a);
  RunConfig updated = run_from(j);
  updated.validate();
  config = std::move(updated);
}

std::vector<ConfigKeyDoc> config_key_docs() {
  static const std::map<std::string, std::string> descriptions = {
      {"corpus", "corpus root directory (content/, styles/, manifest.json)"},
      {"output_dir", "run directory for logs, checkpoints and reports; relative paths resolve under $GASNEXT_OUTPUT_ROOT when set"},
      {"generator.resolution", "glyph resolution R (must be divisible by 2^max(encoder_depth, 3))"},
      {"generator.channels", "image channels, 1 (gray) or 3"},
      {"generator.base_width", "channels of the first conv block, doubling per stage"},
      {"generator.encoder_depth", "number of stride-2 content encoder stages"},
      {"generator.num_attention_levels", "parallel context-aware attention blocks (fixed at 3)"},
      {"generator.style_vector_dim", "dimension of each level vector and the style code"},
      {"generator.m_default", "style references sampled per sample (m)"},
      {"generator.max_width", "channel cap for deep stages"},
      {"generator.texture_branch", "run the texture decoder; off means y = y_gray"},
      {"discriminator.patch_size", "local discriminator patch size"},
      {"discriminator.patches_per_image", "patches cut from each real and synthesized image"},
      {"discriminator.blur_sigma", "Gaussian sigma for blurred negative patches"},
      {"discriminator.blur_kernel", "Gaussian kernel size (odd)"},
      {"discriminator.base_width", "channels of the first discriminator conv"},
      {"discriminator.include_gray_patches", "also cut synthesized patches from y_gray"},
      {"loss_weights.adv_sha", "shape adversarial weight (published value)"},
      {"loss_weights.adv_tex", "texture adversarial weight (published value)"},
      {"loss_weights.l1_gray", "gray L1 weight (published value)"},
      {"loss_weights.l1_tex", "texture L1 weight (published value)"},
      {"loss_weights.cx_gray", "gray contextual loss weight (published value)"},
      {"loss_weights.cx_tex", "texture contextual loss weight (published value)"},
      {"loss_weights.local", "local refinement weight (published value)"},
      {"cx.h", "contextual similarity bandwidth (published value)"},
      {"cx.epsilon", "contextual distance normalizer epsilon (published value)"},
      {"cx.layers", "1-based extractor blocks compared by the contextual loss"},
      {"cx.extractor", "'random' (frozen seeded CNN) or 'vgg19' (pretrained weights file)"},
      {"cx.weights_path", "VGG19 weights archive, required for cx.extractor = vgg19"},
      {"cx.extractor_seed", "seed of the random extractor"},
      {"train.lr", "Adam learning rate"},
      {"train.beta1", "Adam first-moment decay"},
      {"train.beta2", "Adam second-moment decay"},
      {"train.batch_size", "samples per step"},
      {"train.steps", "training steps"},
      {"train.d_steps_per_g", "discriminator updates per generator update"},
      {"train.seed", "seed for weights, sampling and patches"},
      {"train.stage", "'train' or 'finetune'"},
      {"train.eval_every", "evaluate every N steps (0 = off)"},
      {"train.checkpoint_every", "checkpoint every N steps (0 = only the final one)"},
      {"train.deterministic", "force deterministic kernels"},
      {"ssim.window", "Gaussian window size"},
      {"ssim.sigma", "Gaussian window sigma"},
      {"ssim.k1", "c1 = (k1 * data_range)^2"},
      {"ssim.k2", "c2 = (k2 * data_range)^2"},
      {"ssim.data_range", "dynamic range of the [0, 1]-mapped images"},
      {"ssim.sample_covariance", "scale window variances by N / (N - 1)"},
      {"eval.pix_threshold", "binarization threshold for pix-acc on [0, 1]"},
      {"eval.embedder_seed", "seed of the FID embedding network"},
  };
  std::vector<ConfigKeyDoc> docs;
  const ordered_json defaults = run_to_json(RunConfig{});
  for (const auto& [key, value] : defaults.items()) {
    auto add = [&](const std::string& name, const ordered_json& v) {
      auto it = descriptions.find(name);
      docs.push_back({name, v.dump(), it == descriptions.end() ? std::string{} : it->second});
    };
    if (value.is_object()) {
      for (const auto& [sub, v] : value.items()) add(key + "." + sub, v);
    } else {
      add(key, value);
    }
  }
  return docs;
}

std::string config_help_text() {
  std::ostringstream out;
  out << "Config keys (JSON file, or --set key=value):\n";
  for (const auto& d : config_key_docs()) {
    out << "  " << d.key << " = " << d.default_value;
    if (!d.description.empty()) out << "\n      " << d.description;
    out << "\n";
  }
  return out.str();
}

}  // namespace gasnext
