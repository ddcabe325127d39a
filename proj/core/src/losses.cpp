#include "gasnext/losses.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gasnext/checkpoint.hpp"
#include "gasnext/corpus.hpp"
#include "gasnext/error.hpp"

namespace gasnext {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
  for (double v : {adv_sha, adv_tex, l1_gray, l1_tex, cx_gray, cx_tex, local}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
  }
}

void CxConfig::validate() const {
  if (!(h > 0.0)) throw ConfigError("cx.h must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("cx.epsilon must be positive");
  if (layers.empty()) throw ConfigError("cx.layers needs at least one tap");
  if (extractor != "random" && extractor != "vgg19") {
    throw ConfigError("cx.extractor must be 'random' or 'vgg19', got '" + extractor + "'");
  }
  if (extractor == "vgg19" && weights_path.empty()) throw ConfigError("cx.extractor 'vgg19' needs cx.weights_path");
}

// ---------------------------------------------------------------------------

namespace {

torch::Tensor ensure_rgb(const torch::Tensor& images) {
  return images.size(1) == 1 ? images.expand({-1, 3, -1, -1}) : images;
}

void check_taps(const std::vector<int64_t>& taps, int64_t blocks) {
  for (auto t : taps) {
    if (t < 1 || t > blocks) {
      throw ConfigError("extractor tap " + std::to_string(t) + " outside [1, " + std::to_string(blocks) + "]");
    }
  }
}

}  // namespace

RandomConvExtractor::RandomConvExtractor(std::vector<int64_t> taps, uint64_t seed, std::vector<int64_t> widths)
    : taps_(std::move(taps)) {
  check_taps(taps_, static_cast<int64_t>(widths.size()));
  Rng rng(seed);
  int64_t in = 3;
  for (int64_t out : widths) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(in * 9));
    std::normal_distribution<double> normal(0.0, stddev);
    std::vector<double> w(static_cast<size_t>(out * in * 9));
    for (auto& v : w) v = normal(rng);
    weights_.push_back(torch::tensor(w, torch::kFloat64).view({out, in, 3, 3}));
    std::vector<double> b(static_cast<size_t>(out));
    for (auto& v : b) v = 0.1 * normal(rng);
    biases_.push_back(torch::tensor(b, torch::kFloat64));
    in = out;
  }
}

std::vector<torch::Tensor> RandomConvExtractor::features(const torch::Tensor& images) {
  auto h = ensure_rgb(images);
  std::vector<torch::Tensor> out;
  const int64_t last = *std::max_element(taps_.begin(), taps_.end());
  std::vector<torch::Tensor> blocks;
  for (int64_t i = 0; i < last; ++i) {
    if (i > 0) h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2).ceil_mode(true));
    auto w = weights_[static_cast<size_t>(i)].to(h.dtype());
    auto b = biases_[static_cast<size_t>(i)].to(h.dtype());
    h = torch::tanh(F::conv2d(h, w, F::Conv2dFuncOptions().bias(b).padding(1)));
    blocks.push_back(h);
  }
  for (auto t : taps_) out.push_back(blocks[static_cast<size_t>(t - 1)]);
  return out;
}

Vgg19Extractor::Vgg19Extractor(std::vector<int64_t> taps, const std::filesystem::path& weights)
    : taps_(std::move(taps)) {
  check_taps(taps_, 5);
  const auto archive = read_archive(weights);
  // torchvision numbering: convs at these indices of `features`.
  const std::vector<std::vector<int>> layout = {
      {0, 2}, {5, 7}, {10, 12, 14, 16}, {19, 21, 23, 25}, {28, 30, 32, 34}};
  for (const auto& block : layout) {
    std::vector<std::pair<torch::Tensor, torch::Tensor>> convs;
    for (int idx : block) {
      const std::string base = "features." + std::to_string(idx);
      auto w = archive.tensors.find(base + ".weight");
      auto b = archive.tensors.find(base + ".bias");
      if (w == archive.tensors.end() || b == archive.tensors.end()) {
        throw CheckpointError("VGG19 weights file lacks '" + base + ".weight' / '.bias'");
      }
      convs.emplace_back(w->second, b->second);
    }
    blocks_.push_back(std::move(convs));
  }
}

std::vector<torch::Tensor> Vgg19Extractor::features(const torch::Tensor& images) {
  // [-1, 1] -> ImageNet-normalized RGB.
  auto mean = torch::tensor({0.485, 0.456, 0.406}, images.dtype()).view({1, 3, 1, 1});
  auto stddev = torch::tensor({0.229, 0.224, 0.225}, images.dtype()).view({1, 3, 1, 1});
  auto h = ((ensure_rgb(images) + 1.0) / 2.0 - mean) / stddev;
  const int64_t last = *std::max_element(taps_.begin(), taps_.end());
  std::vector<torch::Tensor> outputs;
  for (int64_t i = 0; i < last; ++i) {
    if (i > 0) h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2).ceil_mode(true));
    for (const auto& [w, b] : blocks_[static_cast<size_t>(i)]) {
      h = torch::relu(F::conv2d(h, w.to(h.dtype()), F::Conv2dFuncOptions().bias(b.to(h.dtype())).padding(1)));
    }
    outputs.push_back(h);
  }
  std::vector<torch::Tensor> out;
  for (auto t : taps_) out.push_back(outputs[static_cast<size_t>(t - 1)]);
  return out;
}

std::unique_ptr<PerceptualExtractor> make_extractor(const CxConfig& config) {
  config.validate();
  if (config.extractor == "vgg19") {
    return std::make_unique<Vgg19Extractor>(config.layers, config.weights_path);
  }
  return std::make_unique<RandomConvExtractor>(config.layers, config.extractor_seed);
}

// ---------------------------------------------------------------------------

torch::Tensor clamp_scores(const torch::Tensor& scores) { return scores.clamp(kScoreClamp, 1.0 - kScoreClamp); }

namespace {

void require_nonempty(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.numel() == 0) throw ShapeError(std::string(what) + " is empty");
}

torch::Tensor mean_log(const torch::Tensor& s) { return torch::log(clamp_scores(s)).mean(); }
torch::Tensor mean_log1m(const torch::Tensor& s) { return torch::log(1.0 - clamp_scores(s)).mean(); }

}  // namespace

torch::Tensor adv_d_shape(const torch::Tensor& scores_real, const torch::Tensor& scores_fake) {
  require_nonempty(scores_real, "real score batch");
  require_nonempty(scores_fake, "fake score batch");
  return mean_log(scores_real) + mean_log1m(scores_fake);
}

torch::Tensor adv_d_texture(const torch::Tensor& scores_real, const torch::Tensor& scores_fake) {
  return adv_d_shape(scores_real, scores_fake);
}

AdvTerms adv_g(const torch::Tensor& scores_fake_gray, const torch::Tensor& scores_fake_tex, const LossWeights& w) {
  require_nonempty(scores_fake_gray, "fake gray score batch");
  require_nonempty(scores_fake_tex, "fake texture score batch");
  return {w.adv_sha * mean_log1m(scores_fake_gray), w.adv_tex * mean_log1m(scores_fake_tex)};
}

L1Terms l1_term(const torch::Tensor& y_gray, const torch::Tensor& y, const torch::Tensor& target_gray,
                const torch::Tensor& target, const LossWeights& w, const torch::Tensor& paired) {
  if (!y_gray.sizes().equals(target_gray.sizes()) || !y.sizes().equals(target.sizes())) {
    throw ShapeError("L1 term: output and target shapes differ");
  }
  const int64_t b = y.size(0);
  if (paired.numel() != b) throw ShapeError("L1 term: paired mask must have one entry per sample");
  auto mask = paired.to(y.dtype()).view({b});
  auto per_gray = (y_gray - target_gray).abs().flatten(1).mean(1);
  auto per_tex = (y - target).abs().flatten(1).mean(1);
  return {w.l1_gray * (mask * per_gray).mean(), w.l1_tex * (mask * per_tex).mean()};
}

L1Terms l1_term(const torch::Tensor& y_gray, const torch::Tensor& y, const torch::Tensor& target_gray,
                const torch::Tensor& target, const LossWeights& w, bool paired) {
  auto mask = torch::full({y.size(0)}, paired ? 1.0 : 0.0, y.options());
  return l1_term(y_gray, y, target_gray, target, w, mask);
}

torch::Tensor feature_set(const torch::Tensor& feature_map) { return feature_map.flatten(2).transpose(1, 2); }

torch::Tensor cosine_distance(const torch::Tensor& x, const torch::Tensor& y) {
  auto dot = torch::bmm(x, y.transpose(1, 2));
  auto norms = x.norm(2, -1).unsqueeze(2) * y.norm(2, -1).unsqueeze(1);
  // Rounding can push a self-distance just below zero.
  return (1.0 - dot / norms.clamp_min(kCosineEps)).clamp_min(0.0);
}

torch::Tensor cx_matrix(const torch::Tensor& x, const torch::Tensor& y, const CxConfig& config) {
  if (x.dim() != 3 || y.dim() != 3 || x.size(0) != y.size(0) || x.size(2) != y.size(2)) {
    throw ShapeError("CX expects [B, N, D] and [B, M, D] feature sets");
  }
  if (x.size(1) == 0 || y.size(1) == 0) throw ShapeError("CX feature sets must be non-empty");
  auto d = cosine_distance(x, y);
  auto d_hat = d / (std::get<0>(d.min(2, true)) + config.epsilon);
  auto w = torch::exp((1.0 - d_hat) / config.h);
  return w / w.sum(2, true);
}

torch::Tensor cx_similarity(const torch::Tensor& x, const torch::Tensor& y, const CxConfig& config) {
  auto cx = cx_matrix(x, y, config);
  return std::get<0>(cx.max(1)).mean(1);
}

namespace {

torch::Tensor cx_branch(const torch::Tensor& output, const torch::Tensor& target, PerceptualExtractor& extractor,
                        const CxConfig& config) {
  auto fo = extractor.features(output);
  auto ft = extractor.features(target);
  auto acc = torch::zeros({output.size(0)}, output.options());
  for (size_t l = 0; l < fo.size(); ++l) {
    acc = acc - torch::log(cx_similarity(feature_set(fo[l]), feature_set(ft[l]), config));
  }
  return (acc / static_cast<double>(fo.size())).mean();
}

}  // namespace

CxTerms cx_loss(const torch::Tensor& y_gray, const torch::Tensor& y, const torch::Tensor& target_gray,
                const torch::Tensor& target, PerceptualExtractor& extractor, const CxConfig& config,
                const LossWeights& w) {
  auto zero = torch::zeros({}, y.options());
  CxTerms terms{zero, zero};
  if (w.cx_gray != 0.0) terms.gray = w.cx_gray * cx_branch(y_gray, target_gray, extractor, config);
  if (w.cx_tex != 0.0) terms.texture = w.cx_tex * cx_branch(y, target, extractor, config);
  return terms;
}

torch::Tensor local_loss_d(const torch::Tensor& scores_real, const torch::Tensor& scores_blurred,
                           const torch::Tensor& scores_synthesized) {
  require_nonempty(scores_real, "local objective: real patch scores");
  require_nonempty(scores_blurred, "local objective: blurred patch scores");
  require_nonempty(scores_synthesized, "local objective: synthesized patch scores");
  return mean_log(scores_real) + mean_log1m(scores_blurred) + mean_log1m(scores_synthesized);
}

torch::Tensor local_loss_g(const torch::Tensor& scores_synthesized, const LossWeights& w) {
  require_nonempty(scores_synthesized, "synthesized patch scores");
  return w.local * mean_log1m(scores_synthesized);
}

double LossBreakdown::get(const std::string& name) const {
  for (const auto& [k, v] : terms) {
    if (k == name) return v;
  }
  throw Error("loss breakdown has no term '" + name + "'");
}

LossBreakdown total_objective(const ObjectiveComponents& c) {
  LossBreakdown out;
  out.terms = {{"adv", c.adv}, {"l1", c.l1}, {"cx", c.cx}, {"local", c.local}};
  for (const auto& [_, v] : out.terms) out.total += v;
  return out;
}

}  // namespace gasnext
