#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "srlab/data.hpp"
#include "srlab/models.hpp"
#include "srlab/train.hpp"

namespace srlab {

/// Run description read from an INI-style file:
///
///   [model]
///   kind = dnsr
///   n_feats = 16
///
/// Every key has a default; unknown sections or keys are errors. Values are
/// addressed as "section.key" for overrides.
class RunConfig {
 public:
  RunConfig();

  static RunConfig load(const std::filesystem::path& path);
  /// Applies file-format text on top of the current values.
  void merge(const std::string& text, const std::string& origin = "<config>");
  /// "section.key=value".
  void apply_override(const std::string& assignment);
  void set(const std::string& dotted_key, const std::string& value);
  const std::string& get(const std::string& dotted_key) const;

  /// Every key in file format, grouped by section.
  std::string resolved_text() const;
  void write(const std::filesystem::path& path) const;

  ModelKind kind() const;
  CompositeSpec composite() const;
  BuildOptions build_options() const;
  bool per_image_mean_shift() const;
  TrainConfig train() const;
  DegradationSpec degradation() const;
  PatchConfig patch() const;
  std::string denoiser_checkpoint() const { return get("model.denoiser_ckpt"); }
  std::string sr_checkpoint() const { return get("model.sr_ckpt"); }
  std::string val_dir() const { return get("data.val_dir"); }
  std::string val_list() const { return get("data.val_list"); }
  std::int64_t adrsr_level_steps() const;
  std::int64_t adrsr_joint_steps() const;

  static const std::vector<std::string>& keys();

 private:
  std::vector<std::pair<std::string, std::string>> values_;
  std::string& slot(const std::string& dotted_key);

  std::int64_t integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
};

}  // namespace srlab
