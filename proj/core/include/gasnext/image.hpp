#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace gasnext {

/// A single glyph raster. `pixels` is a float32 tensor laid out [C, H, W]
/// with values in [-1, 1]; C is 1 (gray) or 3 (RGB).
struct GlyphImage {
  torch::Tensor pixels;
  std::string codepoint;

  int64_t channels() const { return pixels.size(0); }
  int64_t height() const { return pixels.size(1); }
  int64_t width() const { return pixels.size(2); }
};

/// 8-bit raster as decoded from / encoded to PNG, interleaved HWC.
struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> data;
};

inline float normalize_u8(uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }
uint8_t denormalize_to_u8(float v);

RawImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RawImage& image);

/// [C, H, W] tensor in [-1, 1] <-> 8-bit interleaved raster.
torch::Tensor raw_to_tensor(const RawImage& raw);
RawImage tensor_to_raw(const torch::Tensor& chw);

/// Decodes a PNG into a GlyphImage with the requested channel count.
/// Gray files requested as RGB are replicated; RGB files requested as gray
/// go through to_grayscale.
GlyphImage load_glyph(const std::filesystem::path& path, int64_t channels, std::string codepoint = {});
void save_glyph(const std::filesystem::path& path, const torch::Tensor& chw);

/// Luminance conversion with weights (0.299, 0.587, 0.114). The weights sum
/// to one, so applying them in the [-1, 1] domain matches applying them to
/// 8-bit values and renormalizing. Single-channel input is returned as-is.
GlyphImage to_grayscale(const GlyphImage& img);
/// Same conversion on a [..., C, H, W] tensor (C in {1, 3}); differentiable.
torch::Tensor to_grayscale(const torch::Tensor& images);

/// Bilinear resize of a [C, H, W] tensor to size x size.
torch::Tensor resize_square(const torch::Tensor& chw, int64_t size);

}  // namespace gasnext
