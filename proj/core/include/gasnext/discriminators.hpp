#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "gasnext/corpus.hpp"
#include "gasnext/image.hpp"

namespace gasnext {

struct DiscriminatorConfig {
  int64_t resolution = 64;
  int64_t channels = 1;
  int64_t patch_size = 16;
  int64_t patches_per_image = 4;
  double blur_sigma = 1.0;
  int64_t blur_kernel = 5;
  int64_t base_width = 64;
  // Also cut synthesized patches from y_gray, not only from y.
  bool include_gray_patches = false;

  void validate() const;
  bool operator==(const DiscriminatorConfig&) const = default;
};

enum class Provenance { real, blurred, synthesized };

struct PatchOffset {
  int64_t image = 0;
  int64_t row = 0;
  int64_t col = 0;
};

struct PatchBatch {
  torch::Tensor patches;  // [N, C, P, P]
  std::vector<PatchOffset> offsets;
  Provenance provenance = Provenance::real;
};

/// Fully convolutional discriminator with a sigmoid head: each output cell is
/// the realness of one receptive-field region.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  PatchDiscriminatorImpl(int64_t in_channels, int64_t input_size, int64_t base_width);

  torch::Tensor logits(const torch::Tensor& x);
  /// Scores in (0, 1), shape [B, 1, h, w].
  torch::Tensor forward(const torch::Tensor& x);

  int64_t in_channels() const { return in_channels_; }

 private:
  int64_t in_channels_;
  torch::nn::Sequential body_;
};
TORCH_MODULE(PatchDiscriminator);

/// D_sha takes 1-channel images, D_tex the configured channel count, D_local
/// patches of the configured channel count.
struct Discriminators {
  explicit Discriminators(const DiscriminatorConfig& config);

  /// Validates channels before scoring.
  torch::Tensor shape_disc(const torch::Tensor& gray);
  torch::Tensor texture_disc(const torch::Tensor& img);
  torch::Tensor local_disc(const torch::Tensor& patches);

  std::vector<torch::Tensor> parameters() const;
  void set_requires_grad(bool enabled);
  void to(torch::Dtype dtype);

  DiscriminatorConfig config;
  PatchDiscriminator shape{nullptr};
  PatchDiscriminator texture{nullptr};
  PatchDiscriminator local{nullptr};
};

/// `count` uniformly random fully-inside offsets per image.
std::vector<PatchOffset> sample_patch_offsets(int64_t images, int64_t count, int64_t resolution, int64_t patch_size,
                                              Rng& rng);
/// Slices patches out of [B, C, H, W] images; differentiable w.r.t. images.
PatchBatch cut_patches(const torch::Tensor& images, const std::vector<PatchOffset>& offsets, int64_t patch_size,
                       Provenance provenance = Provenance::real);
PatchBatch cut_patches(const GlyphImage& img, int64_t count, int64_t patch_size, Rng& rng);

/// Normalized 1-D Gaussian taps.
torch::Tensor gaussian_kernel1d(double sigma, int64_t size);
/// Separable Gaussian blur of [N, C, H, W] with reflect padding.
torch::Tensor gaussian_blur(const torch::Tensor& images, double sigma, int64_t kernel);
/// Blurs real patches into extra negatives. Throws if provenance != real.
PatchBatch blur_patches(const PatchBatch& batch, double sigma, int64_t kernel);

}  // namespace gasnext
