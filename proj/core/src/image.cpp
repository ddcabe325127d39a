#include "gasnext/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gasnext/error.hpp"

namespace gasnext {

uint8_t denormalize_to_u8(float v) {
  const float scaled = std::round((v + 1.0f) * 127.5f);
  return static_cast<uint8_t>(std::clamp(scaled, 0.0f, 255.0f));
}

RawImage read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot read image '" + path.string() + "': " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

  RawImage raw;
  raw.width = static_cast<int>(image.width);
  raw.height = static_cast<int>(image.height);
  raw.channels = color ? 3 : 1;
  raw.data.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raw.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("cannot decode image '" + path.string() + "': " + image.message);
  }
  return raw;
}

void write_png(const std::filesystem::path& path, const RawImage& raw) {
  if (raw.channels != 1 && raw.channels != 3) {
    throw ShapeError("PNG output supports 1 or 3 channels, got " + std::to_string(raw.channels));
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(raw.width);
  image.height = static_cast<png_uint_32>(raw.height);
  image.format = raw.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, raw.data.data(), 0, nullptr)) {
    throw DataError("cannot write image '" + path.string() + "': " + image.message);
  }
}

torch::Tensor raw_to_tensor(const RawImage& raw) {
  auto hwc = torch::from_blob(const_cast<uint8_t*>(raw.data.data()),
                              {raw.height, raw.width, raw.channels}, torch::kUInt8)
                 .to(torch::kFloat32);
  return (hwc / 127.5f - 1.0f).permute({2, 0, 1}).contiguous();
}

RawImage tensor_to_raw(const torch::Tensor& chw) {
  if (chw.dim() != 3) throw ShapeError("expected a [C, H, W] tensor");
  auto hwc = chw.detach().to(torch::kFloat32).permute({1, 2, 0}).contiguous();
  RawImage raw;
  raw.channels = static_cast<int>(hwc.size(2));
  raw.height = static_cast<int>(hwc.size(0));
  raw.width = static_cast<int>(hwc.size(1));
  raw.data.resize(static_cast<size_t>(hwc.numel()));
  const float* src = hwc.data_ptr<float>();
  std::transform(src, src + hwc.numel(), raw.data.begin(), denormalize_to_u8);
  return raw;
}

GlyphImage load_glyph(const std::filesystem::path& path, int64_t channels, std::string codepoint) {
  GlyphImage img{raw_to_tensor(read_png(path)), std::move(codepoint)};
  if (channels == 1 && img.channels() == 3) {
    img = to_grayscale(img);
  } else if (channels == 3 && img.channels() == 1) {
    img.pixels = img.pixels.repeat({3, 1, 1});
  } else if (channels != 1 && channels != 3) {
    throw ConfigError("channels must be 1 or 3, got " + std::to_string(channels));
  }
  return img;
}

void save_glyph(const std::filesystem::path& path, const torch::Tensor& chw) {
  write_png(path, tensor_to_raw(chw));
}

torch::Tensor to_grayscale(const torch::Tensor& images) {
  const int64_t cdim = images.dim() - 3;
  const int64_t c = images.size(cdim);
  if (c == 1) return images;
  if (c != 3) throw ShapeError("to_grayscale expects 1 or 3 channels, got " + std::to_string(c));
  auto r = images.narrow(cdim, 0, 1);
  auto g = images.narrow(cdim, 1, 1);
  auto b = images.narrow(cdim, 2, 1);
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

GlyphImage to_grayscale(const GlyphImage& img) {
  if (img.channels() == 1) return img;
  return GlyphImage{to_grayscale(img.pixels), img.codepoint};
}

torch::Tensor resize_square(const torch::Tensor& chw, int64_t size) {
  namespace F = torch::nn::functional;
  auto out = F::interpolate(chw.unsqueeze(0), F::InterpolateFuncOptions()
                                                  .size(std::vector<int64_t>{size, size})
                                                  .mode(torch::kBilinear)
                                                  .align_corners(false));
  return out.squeeze(0).clamp(-1.0, 1.0);
}

}  // namespace gasnext
