#pragma once

#include "srlab/tensor.hpp"

namespace srlab {

/// Positive rational scale factor.
struct Ratio {
  int num = 1;
  int den = 1;
  double value() const { return static_cast<double>(num) / den; }
};

/// Cubic-convolution parameter. -0.5 matches the imresize-style tooling used to
/// build bicubic SR datasets.
inline constexpr double kCubicA = -0.5;

/// Keys cubic convolution kernel.
double cubic_kernel(double x, double a = kCubicA);

struct ResampleOptions {
  double cubic_a = kCubicA;
  /// Widen the kernel by 1/scale when downscaling.
  bool antialias = true;
};

/// Separable bicubic resampling of an N x C x H x W tensor to
/// round(H * scale) x round(W * scale). Pixel centres are aligned
/// (source coordinate u = (i + 0.5) / scale - 0.5); taps beyond the border
/// replicate the edge pixel. Not differentiable.
Tensor bicubic_resample(const Tensor& image, Ratio scale, const ResampleOptions& options = {});

/// Separable Gaussian blur truncated at ceil(3 sigma), edge replication.
/// sigma == 0 returns a copy.
Tensor gaussian_blur(const Tensor& image, double sigma);

}  // namespace srlab
