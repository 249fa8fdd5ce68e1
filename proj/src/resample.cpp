#include "srlab/resample.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace srlab {

double cubic_kernel(double x, double a) {
  const double t = std::abs(x);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

namespace {

// Per-output tap list along one axis: weights are normalised to sum to one.
struct AxisTaps {
  std::vector<int> start;               // first source index (unclamped) per output
  std::vector<std::vector<double>> w;   // weights per output
};

AxisTaps make_taps(int out_extent, double scale, const ResampleOptions& opt) {
  AxisTaps taps;
  taps.start.resize(static_cast<std::size_t>(out_extent));
  taps.w.resize(static_cast<std::size_t>(out_extent));
  const double kernel_scale = (opt.antialias && scale < 1.0) ? scale : 1.0;
  const double support = 2.0 / kernel_scale;
  for (int i = 0; i < out_extent; ++i) {
    const double u = (i + 0.5) / scale - 0.5;
    const int first = static_cast<int>(std::floor(u - support)) + 1;
    const int last = static_cast<int>(std::ceil(u + support)) - 1;
    std::vector<double> weights;
    double total = 0.0;
    for (int j = first; j <= last; ++j) {
      const double wgt = kernel_scale * cubic_kernel(kernel_scale * (u - j), opt.cubic_a);
      weights.push_back(wgt);
      total += wgt;
    }
    for (auto& wgt : weights) wgt /= total;
    taps.start[static_cast<std::size_t>(i)] = first;
    taps.w[static_cast<std::size_t>(i)] = std::move(weights);
  }
  return taps;
}

int clamp_index(int j, int extent) { return std::clamp(j, 0, extent - 1); }

}  // namespace

Tensor bicubic_resample(const Tensor& image, Ratio scale, const ResampleOptions& options) {
  if (scale.num <= 0 || scale.den <= 0)
    throw ShapeError("bicubic_resample: scale must be positive, got " + std::to_string(scale.num) +
                     "/" + std::to_string(scale.den));
  if (image.rank() != 4) throw ShapeError("bicubic_resample: expected N x C x H x W");
  const int n = static_cast<int>(image.dim(0)), c = static_cast<int>(image.dim(1));
  const int h = static_cast<int>(image.dim(2)), w = static_cast<int>(image.dim(3));
  const double s = scale.value();
  const int out_h = static_cast<int>(std::lround(h * s));
  const int out_w = static_cast<int>(std::lround(w * s));
  if (out_h < 1 || out_w < 1)
    throw ShapeError("bicubic_resample: output would be empty for input " + shape_str(image.shape()));

  const AxisTaps tx = make_taps(out_w, s, options);
  const AxisTaps ty = make_taps(out_h, s, options);
  Tensor out = Tensor::zeros({n, c, out_h, out_w}, image.dtype());
  visit_dtype(image.dtype(), [&]<typename T>() {
    auto src = image.data<T>();
    auto dst = out.data<T>();
    std::vector<double> rows(static_cast<std::size_t>(h) * out_w);
    for (int p = 0; p < n * c; ++p) {
      const T* plane = src.data() + static_cast<std::size_t>(p) * h * w;
      // Horizontal pass.
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < out_w; ++x) {
          const auto& wt = tx.w[static_cast<std::size_t>(x)];
          const int first = tx.start[static_cast<std::size_t>(x)];
          double acc = 0.0;
          for (std::size_t t = 0; t < wt.size(); ++t)
            acc += wt[t] * static_cast<double>(plane[static_cast<std::size_t>(y) * w +
                                                     clamp_index(first + static_cast<int>(t), w)]);
          rows[static_cast<std::size_t>(y) * out_w + x] = acc;
        }
      // Vertical pass.
      T* out_plane = dst.data() + static_cast<std::size_t>(p) * out_h * out_w;
      for (int y = 0; y < out_h; ++y) {
        const auto& wt = ty.w[static_cast<std::size_t>(y)];
        const int first = ty.start[static_cast<std::size_t>(y)];
        for (int x = 0; x < out_w; ++x) {
          double acc = 0.0;
          for (std::size_t t = 0; t < wt.size(); ++t)
            acc += wt[t] * rows[static_cast<std::size_t>(clamp_index(first + static_cast<int>(t), h)) * out_w + x];
          out_plane[static_cast<std::size_t>(y) * out_w + x] = static_cast<T>(acc);
        }
      }
    }
  });
  return out;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  if (sigma < 0.0) throw ShapeError("gaussian_blur: sigma must be nonnegative");
  if (sigma == 0.0) return image.clone();
  if (image.rank() != 4) throw ShapeError("gaussian_blur: expected N x C x H x W");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= total;

  const int planes = static_cast<int>(image.dim(0) * image.dim(1));
  const int h = static_cast<int>(image.dim(2)), w = static_cast<int>(image.dim(3));
  Tensor out = Tensor::zeros(image.shape(), image.dtype());
  visit_dtype(image.dtype(), [&]<typename T>() {
    auto src = image.data<T>();
    auto dst = out.data<T>();
    std::vector<double> tmp(static_cast<std::size_t>(h) * w);
    for (int p = 0; p < planes; ++p) {
      const T* plane = src.data() + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i)
            acc += kernel[static_cast<std::size_t>(i + radius)] *
                   static_cast<double>(plane[static_cast<std::size_t>(y) * w + clamp_index(x + i, w)]);
          tmp[static_cast<std::size_t>(y) * w + x] = acc;
        }
      T* out_plane = dst.data() + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i)
            acc += kernel[static_cast<std::size_t>(i + radius)] *
                   tmp[static_cast<std::size_t>(clamp_index(y + i, h)) * w + x];
          out_plane[static_cast<std::size_t>(y) * w + x] = static_cast<T>(acc);
        }
    }
  });
  return out;
}

}  // namespace srlab
