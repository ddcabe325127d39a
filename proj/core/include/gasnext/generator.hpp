#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "gasnext/image.hpp"

namespace gasnext {

struct GeneratorConfig {
  int64_t resolution = 64;
  int64_t channels = 1;
  int64_t base_width = 64;
  int64_t encoder_depth = 3;
  int64_t num_attention_levels = 3;
  int64_t style_vector_dim = 256;
  int64_t m_default = 4;
  int64_t max_width = 512;
  // With texture_branch off, y is y_gray replicated to `channels`.
  bool texture_branch = true;

  /// Channel count of encoder stage s (stage 0 is the stem).
  int64_t width(int64_t stage) const;
  void validate() const;
  bool operator==(const GeneratorConfig&) const = default;
};

/// Per-stage content feature maps, each [B, C_s, R / 2^s, R / 2^s],
/// s = 0 (stem) .. encoder_depth.
struct ContentFeatures {
  std::vector<torch::Tensor> stages;
};

struct AttentionResult {
  torch::Tensor context;    // [B, C]
  torch::Tensor attention;  // [B, H, W], sums to 1 over H * W
};

struct LayerAttentionResult {
  torch::Tensor weights;   // [B, levels], softmax over levels
  torch::Tensor combined;  // [B, D]
};

struct StyleFeatures {
  torch::Tensor level_vectors;  // [B, m, levels, D]
  torch::Tensor level_weights;  // [B, m, levels]
  torch::Tensor style_code;     // [B, D], mean over the m style images
};

struct GeneratorOutput {
  torch::Tensor y_gray;  // [B, 1, R, R]
  torch::Tensor y;       // [B, channels, R, R]
};

/// Spatial self-attention pooling: score_i = v^T tanh(W h_i + b), softmax
/// over all H * W locations, context = sum_i a_i h_i.
class ContextAwareAttentionImpl : public torch::nn::Module {
 public:
  explicit ContextAwareAttentionImpl(int64_t dim);
  AttentionResult forward(const torch::Tensor& feature_map);
  torch::Tensor scores(const torch::Tensor& feature_map);

  torch::nn::Linear proj{nullptr};
  torch::nn::Linear context_vector{nullptr};
};
TORCH_MODULE(ContextAwareAttention);

/// Softmax-weighted choice among receptive-field levels. Scores come from a
/// linear layer over the global-average-pooled summary map.
class LayerAttentionImpl : public torch::nn::Module {
 public:
  LayerAttentionImpl(int64_t summary_channels, int64_t levels);
  LayerAttentionResult forward(const std::vector<torch::Tensor>& level_vectors, const torch::Tensor& summary_map);
  static LayerAttentionResult combine(const torch::Tensor& scores, const std::vector<torch::Tensor>& level_vectors);

  torch::nn::Linear score{nullptr};
};
TORCH_MODULE(LayerAttention);

class ContentEncoderImpl : public torch::nn::Module {
 public:
  explicit ContentEncoderImpl(const GeneratorConfig& config);
  ContentFeatures forward(const torch::Tensor& x);

 private:
  GeneratorConfig config_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::ModuleList down_;
};
TORCH_MODULE(ContentEncoder);

/// Shared-weight CNN applied to each style image. Feature maps after down
/// stages 1, 2, 3 each feed one context-aware attention block.
class StyleEncoderImpl : public torch::nn::Module {
 public:
  explicit StyleEncoderImpl(const GeneratorConfig& config);
  /// styles: [B, m, C, R, R]
  StyleFeatures forward(const torch::Tensor& styles);

 private:
  GeneratorConfig config_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::ModuleList down_;
  torch::nn::ModuleList level_proj_;
  torch::nn::ModuleList attention_;
  LayerAttention layer_attention_{nullptr};
};
TORCH_MODULE(StyleEncoder);

/// One upsampling branch: nearest x2 + conv per stage, concatenating the
/// matching content skip. Output has 2 * width(0) channels at full resolution.
class DecoderBranchImpl : public torch::nn::Module {
 public:
  DecoderBranchImpl(const GeneratorConfig& config, int64_t bottleneck_channels);
  torch::Tensor forward(const torch::Tensor& bottleneck, const ContentFeatures& content);

 private:
  GeneratorConfig config_;
  torch::nn::ModuleList up_;
};
TORCH_MODULE(DecoderBranch);

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorConfig& config);

  const GeneratorConfig& config() const { return config_; }

  /// x: [B, C, R, R]
  ContentFeatures encode_content(const torch::Tensor& x);
  /// styles: [B, m, C, R, R]
  StyleFeatures encode_style(const torch::Tensor& styles);
  GeneratorOutput decode(const ContentFeatures& content, const StyleFeatures& style);
  GeneratorOutput forward(const torch::Tensor& content, const torch::Tensor& styles);

  /// Single-sample convenience over GlyphImages.
  GeneratorOutput generate(const GlyphImage& content, const std::vector<GlyphImage>& styles);

 private:
  void check_images(const torch::Tensor& x, const char* what) const;

  GeneratorConfig config_;
  ContentEncoder content_encoder_{nullptr};
  StyleEncoder style_encoder_{nullptr};
  DecoderBranch shape_decoder_{nullptr};
  DecoderBranch texture_decoder_{nullptr};
  torch::nn::Conv2d shape_head_{nullptr};
  torch::nn::Conv2d texture_head_{nullptr};
};
TORCH_MODULE(Generator);

/// Stacks m style glyphs into [m, C, R, R]; throws on empty input or
/// heterogeneous shapes.
torch::Tensor stack_style_images(const std::vector<GlyphImage>& images);

}  // namespace gasnext
