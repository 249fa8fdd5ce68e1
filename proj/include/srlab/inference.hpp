#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "srlab/augment.hpp"
#include "srlab/data.hpp"
#include "srlab/image.hpp"
#include "srlab/models.hpp"

namespace srlab {

/// 1 x 3 x h x w f32 pixels (0..255) -> 1 x 3 x sh x sw f32 pixels.
using Upscaler = std::function<Tensor(const Tensor&)>;

/// Runs the model without recording gradients, applying its per-image mean
/// shift around the forward pass. Output is f32.
Tensor predict(const Model& model, const Tensor& lr);
Upscaler model_upscaler(const Model& model);
Upscaler bicubic_upscaler(int scale);

/// Average of inverse(t)(f(t(x))) over the 8 dihedral transforms, or all 48
/// when rgb_shuffle is set. The f32 outputs are summed in double so the
/// result does not depend on pass order.
Tensor self_ensemble(const Upscaler& f, const Tensor& lr, bool rgb_shuffle);
Upscaler ensembled(Upscaler f, bool rgb_shuffle);

ImageBuffer upscale(const Model& model, const ImageBuffer& lr);
ImageBuffer self_ensemble_predict(const Model& model, const ImageBuffer& lr, bool use_rgb_shuffle);

struct EvalOptions {
  int crop_border = -1;  // -1: crop the scale factor
  bool luma_only = false;
  bool self_ensemble = false;
  bool rgb_shuffle = false;  // implies self_ensemble
};

struct EvalRow {
  std::string image;
  double psnr = 0.0;
  double ssim = 0.0;
  double psnr_other = std::numeric_limits<double>::quiet_NaN();
  double delta = std::numeric_limits<double>::quiet_NaN();  // psnr - psnr_other
};

struct Aggregate {
  double mean = 0.0, std = 0.0, min = 0.0, max = 0.0;  // std is the population deviation
};

Aggregate aggregate(const std::vector<double>& values);

struct EvalReport {
  std::vector<EvalRow> rows;
  bool paired = false;
  Aggregate psnr, ssim, psnr_other, delta;
  std::size_t improved = 0;  // rows with delta > 0

  /// Rows ordered by ascending delta (ties by name).
  std::vector<EvalRow> sorted_by_delta() const;
  /// image,psnr,ssim[,psnr_other,delta]; the sorted variant prepends rank.
  /// Aggregates go in leading '#' lines, all values printed with %.17g.
  void write_csv(const std::filesystem::path& path, bool sorted = false) const;
};

/// Per-image PSNR/SSIM of `model` (and of `other` when given) against HR.
/// Images are processed in parallel; row order follows `pairs`.
EvalReport evaluate(const Upscaler& model, const std::vector<ImagePair>& pairs, int scale,
                    const EvalOptions& options = {}, const Upscaler* other = nullptr);

/// Pairs <hr_dir>/<stem>.png with <lr_dir>/<stem>.png. Unmatched names on
/// either side are listed in the DataError. With `only`, just those stems are
/// kept (each must exist).
std::vector<ImagePair> load_eval_pairs(const std::filesystem::path& hr_dir, const std::filesystem::path& lr_dir,
                                       int scale, const std::vector<std::string>* only = nullptr);

/// One stem or file name per line; blank lines and '#' comments ignored.
std::vector<std::string> read_val_list(const std::filesystem::path& path);

}  // namespace srlab
