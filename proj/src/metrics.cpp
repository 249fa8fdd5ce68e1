#include "srlab/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace srlab {
namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

struct Region {
  int x0, y0, w, h;
};

Region checked_region(const ImageBuffer& a, const ImageBuffer& b, const MetricOptions& options,
                      const char* metric) {
  if (!a.same_size(b))
    throw ShapeError(std::string(metric) + ": dimension mismatch " + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height));
  const int crop = options.crop_border;
  Region r{crop, crop, a.width - 2 * crop, a.height - 2 * crop};
  if (crop < 0 || r.w <= 0 || r.h <= 0)
    throw ShapeError(std::string(metric) + ": border crop leaves no pixels");
  return r;
}

// One plane per compared channel (RGB, or BT.601 luma), cropped to the region.
std::vector<std::vector<double>> planes_of(const ImageBuffer& img, const Region& r, bool luma) {
  const std::size_t n = static_cast<std::size_t>(r.w) * r.h;
  std::vector<std::vector<double>> planes(luma ? 1 : 3, std::vector<double>(n));
  for (int row = 0; row < r.h; ++row)
    for (int col = 0; col < r.w; ++col) {
      const std::size_t i = static_cast<std::size_t>(row) * r.w + col;
      const int x = r.x0 + col, y = r.y0 + row;
      if (luma) {
        planes[0][i] = 16.0 + (65.481 * img.at(x, y, 0) + 128.553 * img.at(x, y, 1) +
                               24.966 * img.at(x, y, 2)) / 255.0;
      } else {
        for (int c = 0; c < 3; ++c) planes[static_cast<std::size_t>(c)][i] = img.at(x, y, c);
      }
    }
  return planes;
}

std::vector<double> gaussian_window_1d() {
  std::vector<double> g(kWindow);
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= total;
  return g;
}

// Valid-mode separable filtering of a w x h plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int w, int h,
                                 const std::vector<double>& g) {
  const int ow = w - kWindow + 1, oh = h - kWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[static_cast<std::size_t>(k)] * plane[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

double psnr(const ImageBuffer& a, const ImageBuffer& b, const MetricOptions& options) {
  const Region r = checked_region(a, b, options, "psnr");
  const auto pa = planes_of(a, r, options.luma_only);
  const auto pb = planes_of(b, r, options.luma_only);
  double sse = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < pa.size(); ++c) {
    for (std::size_t i = 0; i < pa[c].size(); ++i) {
      const double d = pa[c][i] - pb[c][i];
      sse += d * d;
    }
    count += pa[c].size();
  }
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / (sse / static_cast<double>(count)));
}

double ssim(const ImageBuffer& a, const ImageBuffer& b, const MetricOptions& options) {
  const Region r = checked_region(a, b, options, "ssim");
  if (r.w < kWindow || r.h < kWindow)
    throw ShapeError("ssim: image " + std::to_string(r.w) + "x" + std::to_string(r.h) +
                     " is smaller than the 11x11 window");
  const auto g = gaussian_window_1d();
  const auto pa = planes_of(a, r, options.luma_only);
  const auto pb = planes_of(b, r, options.luma_only);
  double total = 0.0;
  for (std::size_t c = 0; c < pa.size(); ++c) {
    const auto& x = pa[c];
    const auto& y = pb[c];
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, r.w, r.h, g);
    const auto my = filter_valid(y, r.w, r.h, g);
    const auto exx = filter_valid(xx, r.w, r.h, g);
    const auto eyy = filter_valid(yy, r.w, r.h, g);
    const auto exy = filter_valid(xy, r.w, r.h, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = exx[i] - mx[i] * mx[i];
      const double vy = eyy[i] - my[i] * my[i];
      const double cov = exy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cov + kC2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(pa.size());
}

}  // namespace srlab
