#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "srlab/tensor.hpp"

namespace srlab {

/// Decoded 8-bit RGB raster, row-major, interleaved (r, g, b) per pixel.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  std::optional<std::string> source_path;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, std::uint8_t fill = 0);

  std::uint8_t& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool same_size(const ImageBuffer& other) const {
    return width == other.width && height == other.height;
  }
};

/// Reads an 8-bit PNG. Gray is replicated to RGB, alpha dropped, palettes expanded.
/// Throws FileNotFoundError, UnsupportedBitDepthError or MalformedImageError.
ImageBuffer load_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG. Output bytes depend only on the pixels.
void save_image(const ImageBuffer& image, const std::filesystem::path& path);

/// 1 x 3 x H x W tensor with values in [0, 255].
Tensor to_tensor(const ImageBuffer& image, DType dtype = DType::f32);

/// Rounds half up and clamps to [0, 255]. Accepts 1 x 3 x H x W or 3 x H x W.
ImageBuffer to_image(const Tensor& tensor);

std::uint8_t quantize_pixel(double value);

}  // namespace srlab
