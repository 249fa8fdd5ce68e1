#include "srlab/image.hpp"

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

namespace srlab {

ImageBuffer::ImageBuffer(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_handler(png_structp png, png_const_charp message) {
  auto* buffer = static_cast<std::string*>(png_get_error_ptr(png));
  if (buffer) *buffer = message;
  png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

ImageBuffer load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FileNotFoundError("image not found: " + path.string());
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw FileNotFoundError("cannot open image: " + path.string());

  png_byte signature[8];
  if (std::fread(signature, 1, 8, file.get()) != 8 || png_sig_cmp(signature, 0, 8) != 0)
    throw MalformedImageError("not a PNG stream: " + path.string());

  std::string libpng_message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &libpng_message,
                                           png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw MalformedImageError("libpng initialisation failed");
  }

  // Everything with a destructor lives above the setjmp point.
  ImageBuffer image;
  std::vector<png_bytep> rows;
  int bit_depth = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw MalformedImageError("malformed PNG " + path.string() + ": " + libpng_message);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth == 16) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw UnsupportedBitDepthError("unsupported bit depth 16 in " + path.string() +
                                   " (only 8-bit PNG is read)");
  }
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  image.width = static_cast<int>(png_get_image_width(png, info));
  image.height = static_cast<int>(png_get_image_height(png, info));
  const auto rowbytes = png_get_rowbytes(png, info);
  if (rowbytes != static_cast<png_size_t>(image.width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw MalformedImageError("unexpected row layout after expansion in " + path.string());
  }
  image.pixels.resize(static_cast<std::size_t>(image.width) * image.height * 3);
  rows.resize(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y)
    rows[static_cast<std::size_t>(y)] = image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  image.source_path = path.string();
  return image;
}

void save_image(const ImageBuffer& image, const std::filesystem::path& path) {
  if (image.width <= 0 || image.height <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3)
    throw ShapeError("save_image: inconsistent image buffer");
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw DataError("cannot write image: " + path.string());

  std::string libpng_message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &libpng_message,
                                            png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing PNG " + path.string() + ": " + libpng_message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y)
    png_write_row(png, image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor to_tensor(const ImageBuffer& image, DType dtype) {
  Tensor t = Tensor::zeros({1, 3, image.height, image.width}, dtype);
  visit_dtype(dtype, [&]<typename T>() {
    auto d = t.data<T>();
    const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
    for (std::size_t i = 0; i < plane; ++i)
      for (int c = 0; c < 3; ++c) d[c * plane + i] = static_cast<T>(image.pixels[i * 3 + c]);
  });
  return t;
}

std::uint8_t quantize_pixel(double value) {
  if (!(value >= 0.0)) return 0;  // also catches NaN
  const double rounded = std::floor(value + 0.5);
  return rounded >= 255.0 ? 255 : static_cast<std::uint8_t>(rounded);
}

ImageBuffer to_image(const Tensor& tensor) {
  const bool batched = tensor.rank() == 4;
  if (!((batched && tensor.dim(0) == 1 && tensor.dim(1) == 3) || (tensor.rank() == 3 && tensor.dim(0) == 3)))
    throw ShapeError("to_image: expected 1x3xHxW or 3xHxW, got " + shape_str(tensor.shape()));
  const int h = static_cast<int>(tensor.dim(batched ? 2 : 1));
  const int w = static_cast<int>(tensor.dim(batched ? 3 : 2));
  ImageBuffer image(w, h);
  visit_dtype(tensor.dtype(), [&]<typename T>() {
    auto d = tensor.data<T>();
    const std::size_t plane = static_cast<std::size_t>(w) * h;
    for (std::size_t i = 0; i < plane; ++i)
      for (int c = 0; c < 3; ++c) image.pixels[i * 3 + c] = quantize_pixel(d[c * plane + i]);
  });
  return image;
}

}  // namespace srlab
