#include "srlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>

#include "srlab/ops.hpp"
#include "srlab/resample.hpp"

namespace srlab {

namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void DegradationSpec::validate() const {
  if (scale != 2 && scale != 4 && scale != 8)
    throw ConfigError("degradation scale must be 2, 4 or 8, got " + std::to_string(scale));
  if (!(blur_sigma >= 0.0)) throw ConfigError("blur_sigma must be >= 0");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
}

ImageBuffer crop_to_multiple(const ImageBuffer& image, int scale) {
  const int w = image.width / scale * scale, h = image.height / scale * scale;
  if (w == image.width && h == image.height) return image;
  ImageBuffer out(w, h);
  out.source_path = image.source_path;
  for (int y = 0; y < h; ++y)
    std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>(y) * image.width * 3, w * 3,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * w * 3);
  return out;
}

ImageBuffer make_lr(const ImageBuffer& hr, const DegradationSpec& spec) {
  spec.validate();
  if (hr.width < spec.scale || hr.height < spec.scale)
    throw DataError("HR image " + std::to_string(hr.width) + "x" + std::to_string(hr.height) +
                    " is smaller than the scale " + std::to_string(spec.scale));
  const ImageBuffer cropped = crop_to_multiple(hr, spec.scale);
  Tensor x = to_tensor(cropped, DType::f64);
  if (spec.blur_sigma > 0.0) x = gaussian_blur(x, spec.blur_sigma);
  x = bicubic_resample(x, Ratio{1, spec.scale});
  if (spec.noise_sigma > 0.0) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (double& v : x.data<double>()) v += noise(rng);
  }
  return to_image(x);
}

Tensor downscale_reference(const ImageBuffer& hr, int scale) {
  return bicubic_resample(to_tensor(crop_to_multiple(hr, scale), DType::f64), Ratio{1, scale});
}

void check_aligned(const ImagePair& pair, int scale) {
  if (pair.hr.width != pair.lr.width * scale || pair.hr.height != pair.lr.height * scale)
    throw DataError("pair '" + pair.stem + "' is not aligned at x" + std::to_string(scale) + ": HR " +
                    std::to_string(pair.hr.width) + "x" + std::to_string(pair.hr.height) + ", LR " +
                    std::to_string(pair.lr.width) + "x" + std::to_string(pair.lr.height));
}

namespace {

ImageBuffer crop(const ImageBuffer& image, int x0, int y0, int w, int h) {
  ImageBuffer out(w, h);
  for (int y = 0; y < h; ++y)
    std::copy_n(image.pixels.begin() + (static_cast<std::ptrdiff_t>(y0 + y) * image.width + x0) * 3, w * 3,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * w * 3);
  return out;
}

}  // namespace

std::array<double, 3> channel_means(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("channel_means: expected N x 3 x H x W");
  const std::int64_t plane = x.dim(2) * x.dim(3);
  const auto v = x.to_doubles();
  std::array<double, 3> mean{};
  for (int c = 0; c < 3; ++c) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) acc += v[static_cast<std::size_t>(c * plane + i)];
    mean[static_cast<std::size_t>(c)] = acc / static_cast<double>(plane);
  }
  return mean;
}

Tensor shift_channels(const Tensor& x, const std::array<double, 3>& mean, double sign) {
  if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("shift_channels: expected N x 3 x H x W");
  Tensor out = x.detach().clone();
  const std::int64_t plane = x.dim(2) * x.dim(3);
  visit_dtype(out.dtype(), [&]<typename T>() {
    auto d = out.data<T>();
    for (std::int64_t b = 0; b < x.dim(0); ++b)
      for (int c = 0; c < 3; ++c) {
        T* p = d.data() + (b * 3 + c) * plane;
        const T shift = static_cast<T>(sign * mean[static_cast<std::size_t>(c)]);
        for (std::int64_t i = 0; i < plane; ++i) p[i] += shift;
      }
  });
  return out;
}

PatchSample sample_patch(const ImagePair& pair, const PatchConfig& cfg, std::mt19937_64& rng) {
  check_aligned(pair, cfg.scale);
  const int p = cfg.lr_patch;
  if (p <= 0) throw ConfigError("lr_patch must be positive");
  if (p > pair.lr.width || p > pair.lr.height)
    throw DataError("patch " + std::to_string(p) + "x" + std::to_string(p) + " (LR) is larger than image '" +
                    pair.stem + "' (" + std::to_string(pair.lr.width) + "x" + std::to_string(pair.lr.height) + ")");
  PatchSample s;
  s.lr_x = std::uniform_int_distribution<int>(0, pair.lr.width - p)(rng);
  s.lr_y = std::uniform_int_distribution<int>(0, pair.lr.height - p)(rng);
  if (cfg.augment_flips) s.transform.flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  if (cfg.augment_rot90) s.transform.rot = std::uniform_int_distribution<int>(0, 3)(rng);
  if (cfg.augment_rgb_shuffle) {
    static const auto perms = channel_permutations();
    s.transform.perm = perms[static_cast<std::size_t>(std::uniform_int_distribution<int>(0, 5)(rng))];
  }
  const int sc = cfg.scale;
  s.lr = apply(s.transform, to_tensor(crop(pair.lr, s.lr_x, s.lr_y, p, p)));
  s.hr = apply(s.transform, to_tensor(crop(pair.hr, s.lr_x * sc, s.lr_y * sc, p * sc, p * sc)));
  if (cfg.per_image_mean_shift) {
    s.lr_mean = channel_means(s.lr);
    s.hr_mean = channel_means(s.hr);
    s.lr = shift_channels(s.lr, s.lr_mean, -1.0);
    s.hr = shift_channels(s.hr, s.hr_mean, -1.0);
  }
  return s;
}

PatchSampler::PatchSampler(const std::vector<ImagePair>* pairs, PatchConfig cfg)
    : pairs_(pairs), cfg_(cfg), rng_(derive_seed(cfg.seed, 0)) {
  if (!pairs_ || pairs_->empty()) throw DataError("patch sampler needs at least one image pair");
  for (const auto& pair : *pairs_) check_aligned(pair, cfg_.scale);
}

std::pair<Tensor, Tensor> PatchSampler::next_batch(int batch_size) {
  std::vector<Tensor> hr, lr;
  std::uniform_int_distribution<std::size_t> pick(0, pairs_->size() - 1);
  for (int b = 0; b < batch_size; ++b) {
    auto s = sample_patch((*pairs_)[pick(rng_)], cfg_, rng_);
    hr.push_back(std::move(s.hr));
    lr.push_back(std::move(s.lr));
  }
  return {ops::stack_batch(hr), ops::stack_batch(lr)};
}

NoiseReport estimate_noise(const std::vector<ImagePair>& pairs, int scale, double flat_threshold) {
  NoiseReport report;
  report.histogram.assign(256, 0);
  double sum = 0.0, pooled_num = 0.0, pooled_den = 0.0;
  for (const auto& pair : pairs) {
    check_aligned(pair, scale);
    const Tensor ref_t = downscale_reference(pair.hr, scale);
    const auto ref = ref_t.data<double>();
    const int w = pair.lr.width, h = pair.lr.height;
    const std::size_t plane = static_cast<std::size_t>(w) * h;
    std::vector<double> diffs;
    for (int by = 0; by + kNoiseWindow <= h; by += kNoiseWindow)
      for (int bx = 0; bx + kNoiseWindow <= w; bx += kNoiseWindow) {
        double worst_var = 0.0;
        for (int c = 0; c < 3; ++c) {
          double m = 0.0, m2 = 0.0;
          for (int y = by; y < by + kNoiseWindow; ++y)
            for (int x = bx; x < bx + kNoiseWindow; ++x) {
              const double v = ref[c * plane + static_cast<std::size_t>(y) * w + x];
              m += v;
              m2 += v * v;
            }
          const double n = kNoiseWindow * kNoiseWindow;
          worst_var = std::max(worst_var, m2 / n - (m / n) * (m / n));
        }
        if (!(worst_var < flat_threshold)) continue;
        diffs.clear();
        for (int c = 0; c < 3; ++c)
          for (int y = by; y < by + kNoiseWindow; ++y)
            for (int x = bx; x < bx + kNoiseWindow; ++x)
              diffs.push_back(pair.lr.at(x, y, c) - ref[c * plane + static_cast<std::size_t>(y) * w + x]);
        double m = 0.0;
        for (double d : diffs) m += d;
        m /= static_cast<double>(diffs.size());
        double ss = 0.0;
        for (double d : diffs) {
          ss += (d - m) * (d - m);
          sum += d;
          const int bin = std::clamp(static_cast<int>(std::floor(d + 128.0)), 0, 255);
          ++report.histogram[static_cast<std::size_t>(bin)];
        }
        const double dof = static_cast<double>(diffs.size() - 1);
        report.region_std.push_back(std::sqrt(ss / dof));
        pooled_num += ss;
        pooled_den += dof;
        report.flat_samples += static_cast<std::int64_t>(diffs.size());
      }
  }
  if (report.region_std.empty())
    throw InsufficientFlatAreaError("insufficient flat area: no 8x8 LR window has variance below flat_threshold=" +
                                    std::to_string(flat_threshold));
  report.pooled_std = std::sqrt(pooled_num / pooled_den);
  report.mean = sum / static_cast<double>(report.flat_samples);
  return report;
}

void write_noise_csv(const NoiseReport& report, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", report.pooled_std);
  out << "# pooled_std=" << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", report.mean);
  out << "# mean=" << buf << "\n# flat_regions=" << report.region_std.size() << "\n";
  out << "bin_center,count\n";
  for (int b = 0; b < 256; ++b) out << NoiseReport::bin_center(b) << "," << report.histogram[static_cast<std::size_t>(b)] << "\n";
}

std::vector<ImageBuffer> load_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FileNotFoundError("image directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<ImageBuffer> images;
  for (const auto& f : files) images.push_back(load_image(f));
  return images;
}

std::vector<ImagePair> load_pairs(const fs::path& root, int scale) {
  const fs::path hr_dir = root / "HR";
  const fs::path lr_dir = root / ("LRx" + std::to_string(scale));
  if (!fs::is_directory(hr_dir)) throw FileNotFoundError("missing HR directory: " + hr_dir.string());
  if (!fs::is_directory(lr_dir)) throw FileNotFoundError("missing LR directory: " + lr_dir.string());
  std::map<std::string, fs::path> hr_files;
  for (const auto& entry : fs::directory_iterator(hr_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png") hr_files[entry.path().stem().string()] = entry.path();
  if (hr_files.empty()) throw DataError("no PNG files in " + hr_dir.string());
  std::vector<ImagePair> pairs;
  for (const auto& [stem, hr_path] : hr_files) {
    const fs::path lr_path = lr_dir / (stem + ".png");
    if (!fs::exists(lr_path)) throw DataError("no LR counterpart for '" + stem + "' in " + lr_dir.string());
    ImagePair pair{stem, load_image(hr_path), load_image(lr_path)};
    check_aligned(pair, scale);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<ImagePair> degrade_all(const std::vector<ImageBuffer>& hr_images, const DegradationSpec& spec) {
  spec.validate();
  std::vector<ImagePair> pairs;
  for (std::size_t i = 0; i < hr_images.size(); ++i) {
    DegradationSpec per_image = spec;
    per_image.seed = derive_seed(spec.seed, i);
    ImageBuffer hr = crop_to_multiple(hr_images[i], spec.scale);
    ImageBuffer lr = make_lr(hr, per_image);
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu", i);
    pairs.push_back({stem, std::move(hr), std::move(lr)});
  }
  return pairs;
}

std::vector<ImagePair> make_dataset(const std::vector<ImageBuffer>& hr_images, const std::vector<std::string>& stems,
                                    const fs::path& out_root, const DegradationSpec& spec) {
  if (stems.size() != hr_images.size()) throw ConfigError("make_dataset: one stem per image required");
  auto pairs = degrade_all(hr_images, spec);
  const fs::path hr_dir = out_root / "HR";
  const fs::path lr_dir = out_root / ("LRx" + std::to_string(spec.scale));
  fs::create_directories(hr_dir);
  fs::create_directories(lr_dir);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pairs[i].stem = stems[i];
    save_image(pairs[i].hr, hr_dir / (stems[i] + ".png"));
    save_image(pairs[i].lr, lr_dir / (stems[i] + ".png"));
  }
  return pairs;
}

ImageBuffer synth_image(int width, int height, std::uint64_t seed) {
  if (width < 8 || height < 8) throw ConfigError("synth_image: size must be at least 8x8");
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto flat_level = [&] { return std::array<double, 3>{uni(60, 195), uni(60, 195), uni(60, 195)}; };

  const int pixels = width * height;
  std::vector<double> canvas(static_cast<std::size_t>(pixels) * 3);
  auto put = [&](int x, int y, const std::array<double, 3>& rgb) {
    for (int c = 0; c < 3; ++c) canvas[(static_cast<std::size_t>(y) * width + x) * 3 + c] = rgb[static_cast<std::size_t>(c)];
  };

  // Background: flat or a gentle linear ramp.
  const auto base = flat_level();
  const bool ramp = uni(0, 1) < 0.5;
  const double gx = ramp ? uni(-40, 40) / width : 0.0, gy = ramp ? uni(-40, 40) / height : 0.0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      put(x, y, {base[0] + gx * x + gy * y, base[1] + gx * x + gy * y, base[2] + gx * x + gy * y});

  // Flat rectangles with hard edges.
  const int rects = 2 + static_cast<int>(uni(0, 3));
  for (int r = 0; r < rects; ++r) {
    const int rw = static_cast<int>(uni(0.2, 0.5) * width), rh = static_cast<int>(uni(0.2, 0.5) * height);
    const int x0 = static_cast<int>(uni(0, width - rw)), y0 = static_cast<int>(uni(0, height - rh));
    const auto level = flat_level();
    for (int y = y0; y < y0 + rh; ++y)
      for (int x = x0; x < x0 + rw; ++x) put(x, y, level);
  }

  // Flat disks.
  const int disks = 1 + static_cast<int>(uni(0, 2));
  for (int d = 0; d < disks; ++d) {
    const double radius = uni(0.08, 0.2) * std::min(width, height);
    const double cx = uni(0, width), cy = uni(0, height);
    const auto level = flat_level();
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius) put(x, y, level);
  }

  // Stripe texture patch.
  {
    const int sw = static_cast<int>(uni(0.2, 0.4) * width), sh = static_cast<int>(uni(0.2, 0.4) * height);
    const int x0 = static_cast<int>(uni(0, width - sw)), y0 = static_cast<int>(uni(0, height - sh));
    const double period = uni(3.0, 9.0), angle = uni(0, std::numbers::pi);
    const double amp = uni(25, 60);
    const auto level = flat_level();
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int y = y0; y < y0 + sh; ++y)
      for (int x = x0; x < x0 + sw; ++x) {
        const double v = amp * std::sin(2 * std::numbers::pi * (ca * x + sa * y) / period);
        put(x, y, {level[0] + v, level[1] + v, level[2] + v});
      }
  }

  // Thin dark or light lines.
  const int lines = static_cast<int>(uni(0, 3));
  for (int l = 0; l < lines; ++l) {
    const bool horizontal = uni(0, 1) < 0.5;
    const int pos = static_cast<int>(uni(0, horizontal ? height : width));
    const double v = uni(0, 1) < 0.5 ? 25.0 : 230.0;
    for (int t = 0; t < (horizontal ? width : height); ++t)
      put(horizontal ? t : pos, horizontal ? pos : t, {v, v, v});
  }

  ImageBuffer img(width, height);
  for (std::size_t i = 0; i < canvas.size(); ++i) img.pixels[i] = quantize_pixel(std::clamp(canvas[i], 20.0, 235.0));
  return img;
}

}  // namespace srlab
