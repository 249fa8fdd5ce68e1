#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "srlab/augment.hpp"
#include "srlab/image.hpp"

namespace srlab {

/// SplitMix64 mix of a base seed and a stream index; used to give every
/// image, worker or trial its own reproducible RNG stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct DegradationSpec {
  int scale = 4;
  double blur_sigma = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Largest top-left crop whose sides are multiples of `scale`.
ImageBuffer crop_to_multiple(const ImageBuffer& image, int scale);

/// Blur, bicubic downsample by 1/scale, add N(0, noise_sigma^2) per sample,
/// round half up and clamp. The HR image is first cropped to a multiple of scale.
ImageBuffer make_lr(const ImageBuffer& hr, const DegradationSpec& spec);

/// Noise-free bicubic downscale of an HR image (the reference the noise
/// estimator compares against), kept in floating point.
Tensor downscale_reference(const ImageBuffer& hr, int scale);

struct ImagePair {
  std::string stem;
  ImageBuffer hr;
  ImageBuffer lr;
};

void check_aligned(const ImagePair& pair, int scale);

struct PatchConfig {
  int lr_patch = 48;
  int scale = 4;
  bool augment_flips = true;
  bool augment_rot90 = true;
  bool augment_rgb_shuffle = false;
  bool per_image_mean_shift = true;
  std::uint64_t seed = 0;
};

struct PatchSample {
  Tensor hr;  // 1 x 3 x (p*s) x (p*s), f32
  Tensor lr;  // 1 x 3 x p x p, f32
  Transform transform;
  int lr_x = 0, lr_y = 0;  // crop origin in LR pixels
  std::array<double, 3> hr_mean{0, 0, 0};
  std::array<double, 3> lr_mean{0, 0, 0};
};

/// Random aligned crop with the same augmentation applied to both patches.
/// With per_image_mean_shift each patch has its own per-channel mean removed.
PatchSample sample_patch(const ImagePair& pair, const PatchConfig& cfg, std::mt19937_64& rng);

/// Per-channel spatial mean of an N x 3 x H x W tensor (batch item 0).
std::array<double, 3> channel_means(const Tensor& x);
/// x - mean[c] (sign = -1) or x + mean[c] (sign = +1) per channel. Not differentiable.
Tensor shift_channels(const Tensor& x, const std::array<double, 3>& mean, double sign);

/// Draws batches of patches from a fixed image list in a reproducible order.
class PatchSampler {
 public:
  PatchSampler(const std::vector<ImagePair>* pairs, PatchConfig cfg);

  /// Stacked batch: hr B x 3 x (p*s) x (p*s), lr B x 3 x p x p.
  std::pair<Tensor, Tensor> next_batch(int batch_size);
  const PatchConfig& config() const { return cfg_; }

 private:
  const std::vector<ImagePair>* pairs_;
  PatchConfig cfg_;
  std::mt19937_64 rng_;
};

struct NoiseReport {
  std::vector<double> region_std;    // one per flat 8x8 LR block
  double pooled_std = 0.0;
  double mean = 0.0;                 // mean difference over all flat samples
  std::int64_t flat_samples = 0;
  std::vector<std::int64_t> histogram;  // 256 unit bins, centres -127.5 .. 127.5

  static double bin_center(int bin) { return bin - 127.5; }
};

inline constexpr int kNoiseWindow = 8;
inline constexpr double kDefaultFlatThreshold = 4.0;

/// Estimates the LR-space noise of a degraded set from regions where the
/// bicubic-downscaled HR is nearly flat (max per-channel variance over an
/// 8x8 window below `flat_threshold`).
NoiseReport estimate_noise(const std::vector<ImagePair>& pairs, int scale,
                           double flat_threshold = kDefaultFlatThreshold);

void write_noise_csv(const NoiseReport& report, const std::filesystem::path& path);

/// Pairs `<root>/HR/*.png` with `<root>/LRx{scale}/*.png` by file stem.
std::vector<ImagePair> load_pairs(const std::filesystem::path& root, int scale);
std::vector<ImageBuffer> load_directory(const std::filesystem::path& dir);

/// Writes `<out>/HR` (cropped to a multiple of scale) and `<out>/LRx{scale}`.
/// Image i is degraded with seed derive_seed(spec.seed, i) in stem order.
std::vector<ImagePair> make_dataset(const std::vector<ImageBuffer>& hr_images,
                                    const std::vector<std::string>& stems,
                                    const std::filesystem::path& out_root, const DegradationSpec& spec);

/// Degrades an in-memory HR list the same way make_dataset does.
std::vector<ImagePair> degrade_all(const std::vector<ImageBuffer>& hr_images, const DegradationSpec& spec);

/// Synthetic natural-ish image: smooth gradient background with flat shapes,
/// hard edges and stripe texture. Flat levels stay within [60, 195].
ImageBuffer synth_image(int width, int height, std::uint64_t seed);

}  // namespace srlab
