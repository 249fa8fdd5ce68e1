#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "srlab/data.hpp"
#include "srlab/inference.hpp"
#include "srlab/models.hpp"
#include "srlab/optim.hpp"

namespace srlab {

enum class LossKind { l1, l1_plus_edge };

std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& name);

struct TrainConfig {
  std::int64_t steps = 2000;  // 0 leaves the model untouched
  int batch = 16;
  double lr = 1e-4;
  std::int64_t lr_halve_every = 200000;
  LossKind loss = LossKind::l1;
  double edge_weight = 0.1;
  std::uint64_t seed = 0;
  std::int64_t val_every = 100;
  std::int64_t checkpoint_every = 1000;

  void validate() const;
};

Tensor l1_loss(const Tensor& pred, const Tensor& target);
/// l1 + edge_weight * mean |sobel(pred) - sobel(target)|.
Tensor edge_loss(const Tensor& pred, const Tensor& target, double edge_weight);
Tensor training_loss(const Tensor& pred, const Tensor& target, const TrainConfig& cfg);

struct MetricsRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double val_psnr = std::numeric_limits<double>::quiet_NaN();  // NaN when not validated
  double val_ssim = std::numeric_limits<double>::quiet_NaN();
  double lr = 0.0;
  std::string stage;  // ADRSR stage label, empty otherwise
};

/// step,loss,val_psnr,val_ssim,lr (empty cells where no validation ran).
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

struct TrainData {
  std::vector<ImagePair> train;
  std::vector<ImagePair> val;
  PatchConfig patch;
};

struct TrainHooks {
  std::function<void(const MetricsRow&)> on_row;
  /// Called every checkpoint_every steps and after the last step.
  std::function<void(std::int64_t step)> on_checkpoint;
};

/// Denoiser training pairs at scale 1: input is the degraded LR image, target
/// the same HR image put through the degradation without noise.
std::vector<ImagePair> denoising_pairs(const std::vector<ImagePair>& pairs, const DegradationSpec& degradation);

/// Mean PSNR/SSIM of `f` over the validation pairs. With level > 0 the HR
/// targets are bicubic-downscaled by 2^level first.
std::pair<double, double> validation_scores(const Upscaler& f, const std::vector<ImagePair>& val, int scale,
                                            int level = 0);

/// Adam training on random patches. Starts at optimizer.steps_taken() so a
/// restored optimizer resumes the step counter and lr schedule. Throws
/// NumericalError naming the step and lr on a non-finite loss.
std::vector<MetricsRow> train(Model& model, const TrainData& data, const TrainConfig& cfg, Adam& optimizer,
                              const TrainHooks& hooks = {});

struct AdrsrStage {
  static constexpr int kJoint = -1;
  int level = kJoint;
  std::int64_t steps = 0;
  std::vector<std::string> prefixes;  // empty: the level's defaults (joint: everything)

  bool joint() const { return level == kJoint; }
  std::string label() const;
};

struct AdrsrSchedule {
  std::vector<AdrsrStage> stages;

  /// Levels strictly coarsest-first, then exactly one final joint stage.
  void validate(int levels) const;
  std::int64_t total_steps() const;

  /// Every level from coarsest to finest, then joint.
  static AdrsrSchedule standard(int levels, std::int64_t steps_per_level, std::int64_t joint_steps);
  /// Lines "level <k> <steps> [prefix,...]" or "joint <steps>"; '#' comments.
  static AdrsrSchedule parse(const std::string& text);
  static AdrsrSchedule load(const std::filesystem::path& path);
};

/// Level k trains its SR network plus the layers fusing it with the coarser result.
std::vector<std::string> default_stage_prefixes(int level, int levels);

struct StageReport {
  std::string label;
  std::size_t trainable_tensors = 0;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
};

/// Staged freeze/unfreeze training. During a level-k stage the model output is
/// R_k and the target is the HR patch downscaled by 2^k. Step numbers and the
/// lr schedule run across stages; cfg.steps is ignored.
std::vector<MetricsRow> train_adrsr(AdrsrModel& model, const TrainData& data, const AdrsrSchedule& schedule,
                                    const TrainConfig& cfg, Adam& optimizer, const TrainHooks& hooks = {},
                                    std::vector<StageReport>* reports = nullptr);

/// Hash over the parameters that are currently frozen.
std::uint64_t frozen_parameter_hash(const Model& model);

/// Mean |sobel(pred - target)| over interior pixels lying on the rows and
/// columns that are multiples of `period`.
double blocky_artifact_energy(const Tensor& pred, const Tensor& target, int period);

}  // namespace srlab
