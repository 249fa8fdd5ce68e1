#pragma once

#include "srlab/image.hpp"

namespace srlab {

struct MetricOptions {
  /// Pixels removed from every side before comparing (0 = full image).
  int crop_border = 0;
  /// Compare BT.601 luma (16-235 range) instead of RGB.
  bool luma_only = false;
};

/// Full-image PSNR (RGB unless luma_only) in dB with MAX = 255; +infinity for identical images.
double psnr(const ImageBuffer& a, const ImageBuffer& b, const MetricOptions& options = {});

/// Structural similarity averaged over R, G, B (or luma only). 11x11 Gaussian window (sigma 1.5)
/// evaluated at every fully-contained position, C1 = (0.01*255)^2, C2 = (0.03*255)^2.
double ssim(const ImageBuffer& a, const ImageBuffer& b, const MetricOptions& options = {});

}  // namespace srlab
