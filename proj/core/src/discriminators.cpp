#include "gasnext/discriminators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gasnext/error.hpp"

namespace gasnext {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void DiscriminatorConfig::validate() const {
  if (channels != 1 && channels != 3) throw ConfigError("discriminator channels must be 1 or 3");
  if (patch_size < 2 || patch_size >= resolution) {
    throw ConfigError("patch_size must be in [2, resolution), got " + std::to_string(patch_size));
  }
  if (patches_per_image < 1) throw ConfigError("patches_per_image must be at least 1");
  if (blur_kernel < 1 || blur_kernel % 2 == 0) throw ConfigError("blur_kernel must be odd");
  if (!(blur_sigma > 0.0)) throw ConfigError("blur_sigma must be positive");
  if (base_width < 1) throw ConfigError("discriminator base_width must be positive");
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int64_t in_channels, int64_t input_size, int64_t base_width)
    : in_channels_(in_channels) {
  // Downsample until the grid is about 4 cells wide, at least once.
  int64_t downs = 0;
  for (int64_t s = input_size; s > 4 && downs < 3; s /= 2) ++downs;
  downs = std::max<int64_t>(downs, 1);

  body_ = register_module("body", nn::Sequential());
  int64_t in = in_channels;
  int64_t width = base_width;
  for (int64_t i = 0; i < downs; ++i) {
    body_->push_back(nn::Conv2d(nn::Conv2dOptions(in, width, 4).stride(2).padding(1)));
    body_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    in = width;
    width = std::min(width * 2, base_width * 8);
  }
  body_->push_back(nn::Conv2d(nn::Conv2dOptions(in, 1, 3).padding(1)));
}

torch::Tensor PatchDiscriminatorImpl::logits(const torch::Tensor& x) { return body_->forward(x); }

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) { return torch::sigmoid(logits(x)); }

Discriminators::Discriminators(const DiscriminatorConfig& cfg) : config(cfg) {
  config.validate();
  shape = PatchDiscriminator(1, cfg.resolution, cfg.base_width);
  texture = PatchDiscriminator(cfg.channels, cfg.resolution, cfg.base_width);
  local = PatchDiscriminator(cfg.channels, cfg.patch_size, cfg.base_width);
}

namespace {

void check_channels(const torch::Tensor& x, int64_t channels, const char* who) {
  if (x.dim() != 4 || x.size(1) != channels) {
    throw ShapeError(std::string(who) + " expects [B, " + std::to_string(channels) + ", H, W], got " +
                     c10::str(x.sizes()));
  }
}

}  // namespace

torch::Tensor Discriminators::shape_disc(const torch::Tensor& gray) {
  check_channels(gray, 1, "shape discriminator");
  return shape->forward(gray);
}

torch::Tensor Discriminators::texture_disc(const torch::Tensor& img) {
  check_channels(img, config.channels, "texture discriminator");
  return texture->forward(img);
}

torch::Tensor Discriminators::local_disc(const torch::Tensor& patches) {
  check_channels(patches, config.channels, "local discriminator");
  return local->forward(patches);
}

std::vector<torch::Tensor> Discriminators::parameters() const {
  std::vector<torch::Tensor> params;
  for (const auto* d : {&shape, &texture, &local}) {
    for (const auto& p : (*d)->parameters()) params.push_back(p);
  }
  return params;
}

void Discriminators::set_requires_grad(bool enabled) {
  for (auto& p : parameters()) p.requires_grad_(enabled);
}

void Discriminators::to(torch::Dtype dtype) {
  shape->to(dtype);
  texture->to(dtype);
  local->to(dtype);
}

std::vector<PatchOffset> sample_patch_offsets(int64_t images, int64_t count, int64_t resolution, int64_t patch_size,
                                              Rng& rng) {
  if (patch_size >= resolution) throw ConfigError("patch_size must be smaller than the image resolution");
  std::uniform_int_distribution<int64_t> pos(0, resolution - patch_size);
  std::vector<PatchOffset> offsets;
  offsets.reserve(static_cast<size_t>(images * count));
  for (int64_t i = 0; i < images; ++i) {
    for (int64_t k = 0; k < count; ++k) {
      const int64_t row = pos(rng);
      const int64_t col = pos(rng);
      offsets.push_back({i, row, col});
    }
  }
  return offsets;
}

PatchBatch cut_patches(const torch::Tensor& images, const std::vector<PatchOffset>& offsets, int64_t patch_size,
                       Provenance provenance) {
  using torch::indexing::Slice;
  std::vector<torch::Tensor> patches;
  patches.reserve(offsets.size());
  for (const auto& o : offsets) {
    patches.push_back(images.index({o.image, Slice(), Slice(o.row, o.row + patch_size), Slice(o.col, o.col + patch_size)}));
  }
  return {torch::stack(patches), offsets, provenance};
}

PatchBatch cut_patches(const GlyphImage& img, int64_t count, int64_t patch_size, Rng& rng) {
  auto offsets = sample_patch_offsets(1, count, img.height(), patch_size, rng);
  return cut_patches(img.pixels.unsqueeze(0), offsets, patch_size);
}

torch::Tensor gaussian_kernel1d(double sigma, int64_t size) {
  std::vector<double> taps(static_cast<size_t>(size));
  const double center = static_cast<double>(size - 1) / 2.0;
  double total = 0.0;
  for (int64_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - center;
    taps[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[static_cast<size_t>(i)];
  }
  for (auto& t : taps) t /= total;
  return torch::tensor(taps, torch::kFloat64);
}

torch::Tensor gaussian_blur(const torch::Tensor& images, double sigma, int64_t kernel) {
  const int64_t c = images.size(1);
  const int64_t pad = kernel / 2;
  auto taps = gaussian_kernel1d(sigma, kernel).to(images.dtype());
  auto kh = taps.view({1, 1, 1, kernel}).repeat({c, 1, 1, 1});
  auto kv = taps.view({1, 1, kernel, 1}).repeat({c, 1, 1, 1});
  // Reflection needs the pad to be smaller than the extent.
  F::PadFuncOptions::mode_t pad_mode = torch::kReflect;
  if (pad >= images.size(2) || pad >= images.size(3)) pad_mode = torch::kReplicate;
  auto x = F::pad(images, F::PadFuncOptions({pad, pad, pad, pad}).mode(pad_mode));
  x = F::conv2d(x, kh, F::Conv2dFuncOptions().groups(c));
  return F::conv2d(x, kv, F::Conv2dFuncOptions().groups(c));
}

PatchBatch blur_patches(const PatchBatch& batch, double sigma, int64_t kernel) {
  if (batch.provenance != Provenance::real) throw ConfigError("only real patches can be blurred into negatives");
  return {gaussian_blur(batch.patches, sigma, kernel), batch.offsets, Provenance::blurred};
}

}  // namespace gasnext
