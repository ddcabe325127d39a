#include "gasnext/generator.hpp"

#include <algorithm>
#include <string>

#include "gasnext/error.hpp"

namespace gasnext {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

constexpr double kSlope = 0.2;

torch::Tensor lrelu(const torch::Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kSlope)); }

nn::Conv2d conv3(int64_t in, int64_t out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)); }

nn::Conv2d down4(int64_t in, int64_t out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1)); }

torch::Tensor upsample2(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kNearest)
                               .recompute_scale_factor(false));
}

}  // namespace

int64_t GeneratorConfig::width(int64_t stage) const {
  int64_t w = base_width;
  for (int64_t s = 0; s < stage; ++s) w = std::min(w * 2, max_width);
  return std::min(w, max_width);
}

void GeneratorConfig::validate() const {
  if (num_attention_levels != 3) throw ConfigError("num_attention_levels is fixed at 3");
  if (channels != 1 && channels != 3) throw ConfigError("generator channels must be 1 or 3");
  if (encoder_depth < 1) throw ConfigError("encoder_depth must be at least 1");
  if (base_width < 1 || style_vector_dim < 1 || max_width < base_width) {
    throw ConfigError("generator widths must be positive and max_width >= base_width");
  }
  if (m_default < 1) throw ConfigError("m_default must be at least 1");
  const int64_t levels = std::max<int64_t>(encoder_depth, num_attention_levels);
  if (resolution < 1 || resolution % (int64_t{1} << levels) != 0) {
    throw ConfigError("resolution " + std::to_string(resolution) + " must be divisible by 2^" +
                      std::to_string(levels));
  }
}

// ---------------------------------------------------------------------------

ContextAwareAttentionImpl::ContextAwareAttentionImpl(int64_t dim) {
  proj = register_module("proj", nn::Linear(dim, dim));
  context_vector = register_module("context_vector", nn::Linear(nn::LinearOptions(dim, 1).bias(false)));
}

torch::Tensor ContextAwareAttentionImpl::scores(const torch::Tensor& feature_map) {
  auto h = feature_map.flatten(2).transpose(1, 2);  // [B, HW, C]
  return context_vector(torch::tanh(proj(h))).squeeze(-1);
}

AttentionResult ContextAwareAttentionImpl::forward(const torch::Tensor& feature_map) {
  const auto b = feature_map.size(0);
  auto h = feature_map.flatten(2).transpose(1, 2);
  auto a = torch::softmax(scores(feature_map), 1);
  auto context = torch::bmm(a.unsqueeze(1), h).squeeze(1);
  return {context, a.view({b, feature_map.size(2), feature_map.size(3)})};
}

LayerAttentionImpl::LayerAttentionImpl(int64_t summary_channels, int64_t levels) {
  score = register_module("score", nn::Linear(summary_channels, levels));
}

LayerAttentionResult LayerAttentionImpl::combine(const torch::Tensor& scores,
                                                 const std::vector<torch::Tensor>& level_vectors) {
  if (static_cast<int64_t>(level_vectors.size()) != scores.size(1)) {
    throw ShapeError("layer attention expects one score per level vector");
  }
  auto weights = torch::softmax(scores, 1);
  auto stacked = torch::stack(level_vectors, 1);  // [B, L, D]
  return {weights, (weights.unsqueeze(-1) * stacked).sum(1)};
}

LayerAttentionResult LayerAttentionImpl::forward(const std::vector<torch::Tensor>& level_vectors,
                                                 const torch::Tensor& summary_map) {
  if (level_vectors.size() != 3) throw ShapeError("layer attention expects exactly 3 level vectors");
  return combine(score(summary_map.mean({2, 3})), level_vectors);
}

// ---------------------------------------------------------------------------

ContentEncoderImpl::ContentEncoderImpl(const GeneratorConfig& config) : config_(config) {
  stem_ = register_module("stem", conv3(config.channels, config.width(0)));
  down_ = register_module("down", nn::ModuleList());
  for (int64_t s = 1; s <= config.encoder_depth; ++s) down_->push_back(down4(config.width(s - 1), config.width(s)));
}

ContentFeatures ContentEncoderImpl::forward(const torch::Tensor& x) {
  ContentFeatures out;
  auto h = lrelu(stem_(x));
  out.stages.push_back(h);
  for (const auto& layer : *down_) {
    h = lrelu(layer->as<nn::Conv2d>()->forward(h));
    out.stages.push_back(h);
  }
  return out;
}

StyleEncoderImpl::StyleEncoderImpl(const GeneratorConfig& config) : config_(config) {
  const int64_t levels = config.num_attention_levels;
  stem_ = register_module("stem", conv3(config.channels, config.width(0)));
  down_ = register_module("down", nn::ModuleList());
  level_proj_ = register_module("level_proj", nn::ModuleList());
  attention_ = register_module("attention", nn::ModuleList());
  for (int64_t s = 1; s <= levels; ++s) {
    down_->push_back(down4(config.width(s - 1), config.width(s)));
    level_proj_->push_back(conv3(config.width(s), config.style_vector_dim));
    attention_->push_back(ContextAwareAttention(config.style_vector_dim));
  }
  layer_attention_ = register_module("layer_attention", LayerAttention(config.width(1), levels));
}

StyleFeatures StyleEncoderImpl::forward(const torch::Tensor& styles) {
  const int64_t b = styles.size(0);
  const int64_t m = styles.size(1);
  auto h = lrelu(stem_(styles.flatten(0, 1)));

  std::vector<torch::Tensor> maps;
  std::vector<torch::Tensor> vectors;
  for (size_t l = 0; l < down_->size(); ++l) {
    h = lrelu(down_[l]->as<nn::Conv2d>()->forward(h));
    maps.push_back(h);
    auto projected = level_proj_[l]->as<nn::Conv2d>()->forward(h);
    vectors.push_back(attention_[l]->as<ContextAwareAttention>()->forward(projected).context);
  }
  auto layer = layer_attention_(vectors, maps.front());

  const int64_t d = config_.style_vector_dim;
  StyleFeatures out;
  out.level_vectors = torch::stack(vectors, 1).view({b, m, -1, d});
  out.level_weights = layer.weights.view({b, m, -1});
  // Sorting each coordinate across the m images before summing makes the
  // mean bit-exactly invariant to the order of the style set.
  auto per_image = layer.combined.view({b, m, d});
  out.style_code = std::get<0>(per_image.sort(1)).sum(1) / static_cast<double>(m);
  return out;
}

DecoderBranchImpl::DecoderBranchImpl(const GeneratorConfig& config, int64_t bottleneck_channels) : config_(config) {
  up_ = register_module("up", nn::ModuleList());
  int64_t in = bottleneck_channels;
  for (int64_t s = config.encoder_depth; s >= 1; --s) {
    up_->push_back(conv3(in, config.width(s - 1)));
    in = 2 * config.width(s - 1);
  }
}

torch::Tensor DecoderBranchImpl::forward(const torch::Tensor& bottleneck, const ContentFeatures& content) {
  auto h = bottleneck;
  int64_t s = config_.encoder_depth;
  for (const auto& layer : *up_) {
    h = lrelu(layer->as<nn::Conv2d>()->forward(upsample2(h)));
    h = torch::cat({h, content.stages[static_cast<size_t>(s - 1)]}, 1);
    --s;
  }
  return h;
}

// ---------------------------------------------------------------------------

GeneratorImpl::GeneratorImpl(const GeneratorConfig& config) : config_(config) {
  config_.validate();
  const int64_t bottleneck = config.width(config.encoder_depth) + config.style_vector_dim;
  const int64_t features = 2 * config.width(0);
  content_encoder_ = register_module("content_encoder", ContentEncoder(config));
  style_encoder_ = register_module("style_encoder", StyleEncoder(config));
  shape_decoder_ = register_module("shape_decoder", DecoderBranch(config, bottleneck));
  shape_head_ = register_module("shape_head", conv3(features, 1));
  if (config.texture_branch) {
    texture_decoder_ = register_module("texture_decoder", DecoderBranch(config, bottleneck));
    texture_head_ = register_module("texture_head", conv3(features + 1, config.channels));
  }
}

void GeneratorImpl::check_images(const torch::Tensor& x, const char* what) const {
  const auto n = x.dim();
  if (n < 4 || x.size(n - 3) != config_.channels || x.size(n - 2) != config_.resolution ||
      x.size(n - 1) != config_.resolution) {
    throw ShapeError(std::string(what) + " must be [..., " + std::to_string(config_.channels) + ", " +
                     std::to_string(config_.resolution) + ", " + std::to_string(config_.resolution) + "], got " +
                     c10::str(x.sizes()));
  }
}

ContentFeatures GeneratorImpl::encode_content(const torch::Tensor& x) {
  check_images(x, "content images");
  if (x.dim() != 4) throw ShapeError("content images must be [B, C, R, R]");
  return content_encoder_(x);
}

StyleFeatures GeneratorImpl::encode_style(const torch::Tensor& styles) {
  if (styles.dim() != 5) throw ShapeError("style images must be [B, m, C, R, R]");
  if (styles.size(1) < 1) throw ShapeError("style set is empty");
  check_images(styles, "style images");
  return style_encoder_(styles);
}

GeneratorOutput GeneratorImpl::decode(const ContentFeatures& content, const StyleFeatures& style) {
  if (static_cast<int64_t>(content.stages.size()) != config_.encoder_depth + 1) {
    throw ShapeError("content features must have encoder_depth + 1 stages");
  }
  if (!style.style_code.defined()) throw ShapeError("style code missing");
  const auto& deepest = content.stages.back();
  const int64_t r = config_.resolution >> config_.encoder_depth;
  if (deepest.size(2) != r || deepest.size(3) != r) throw ShapeError("content bottleneck resolution mismatch");
  if (style.style_code.size(0) != deepest.size(0)) throw ShapeError("content and style batch sizes differ");

  auto expanded = style.style_code.unsqueeze(-1).unsqueeze(-1).expand({-1, -1, r, r});
  auto bottleneck = torch::cat({deepest, expanded}, 1);

  GeneratorOutput out;
  out.y_gray = torch::tanh(shape_head_(shape_decoder_(bottleneck, content)));
  if (config_.texture_branch) {
    auto texture = texture_decoder_(bottleneck, content);
    out.y = torch::tanh(texture_head_(torch::cat({out.y_gray, texture}, 1)));
  } else {
    out.y = out.y_gray.repeat({1, config_.channels, 1, 1});
  }
  return out;
}

GeneratorOutput GeneratorImpl::forward(const torch::Tensor& content, const torch::Tensor& styles) {
  auto c = encode_content(content);
  auto s = encode_style(styles);
  return decode(c, s);
}

GeneratorOutput GeneratorImpl::generate(const GlyphImage& content, const std::vector<GlyphImage>& styles) {
  auto param = parameters().front();
  auto x = content.pixels.unsqueeze(0).to(param.dtype());
  auto s = stack_style_images(styles).unsqueeze(0).to(param.dtype());
  return forward(x, s);
}

torch::Tensor stack_style_images(const std::vector<GlyphImage>& images) {
  if (images.empty()) throw ShapeError("style set is empty");
  std::vector<torch::Tensor> tensors;
  for (const auto& img : images) {
    if (!img.pixels.sizes().equals(images.front().pixels.sizes())) {
      throw ShapeError("style images have heterogeneous shapes");
    }
    tensors.push_back(img.pixels);
  }
  return torch::stack(tensors);
}

}  // namespace gasnext
