#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "srlab/optim.hpp"
#include "srlab/tensor.hpp"

namespace srlab {

enum class Upsampler { subpixel_direct = 0, subpixel_chained_x2 = 1, transposed_conv = 2 };

std::string to_string(Upsampler u);
Upsampler parse_upsampler(const std::string& name);

struct BaselineSRSpec {
  int n_blocks = 4;
  int n_feats = 16;
  int kernel = 3;
  int scale = 2;
  Upsampler upsampler = Upsampler::subpixel_direct;
  double residual_scale_init = 0.1;
  bool residual_scale_trainable = true;

  void validate() const;
};

struct DenoiserSpec {
  int depth = 7;
  int n_feats = 16;
  int kernel = 3;
  bool residual_output = true;  // output = input - predicted noise

  void validate() const;
};

enum class ModelKind { baseline = 0, denoiser = 1, dnisr = 2, dnsr = 3, adrsr = 4 };

std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& name);

struct CompositeSpec {
  ModelKind kind = ModelKind::baseline;
  DenoiserSpec denoiser;
  BaselineSRSpec sr;
  int bridge_kernel = 5;
  int levels = 2;
  int fuse_kernel = 3;
};

struct BuildOptions {
  std::uint64_t seed = 0;
  DType dtype = DType::f32;
};

/// Flat key/value description of a model, enough to rebuild it.
using SpecMap = std::map<std::string, double>;

/// Zero-padded "same" convolution whose parameters live in a shared list.
class Conv2d {
 public:
  Conv2d() = default;
  /// He-normal weight (std sqrt(2 / fan_in)), zero bias.
  Conv2d(std::vector<Parameter>& sink, const std::string& name, int in_channels, int out_channels,
         int kernel, std::mt19937_64& rng, DType dtype, bool with_bias = true);

  Tensor operator()(const Tensor& x) const;

  Tensor weight;  // out x in x k x k
  Tensor bias;    // out, or undefined
  int padding = 0;
};

/// EDSR-style trunk: head conv, residual blocks, body-end conv with global
/// skip, upsampler, tail conv to RGB.
class SRNet {
 public:
  SRNet() = default;
  SRNet(std::vector<Parameter>& sink, const std::string& prefix, const BaselineSRSpec& spec,
        int in_channels, bool with_head, std::mt19937_64& rng, DType dtype);

  Tensor forward(const Tensor& x) const { return trunk(head(x)); }
  Tensor head(const Tensor& x) const { return head_(x); }
  /// Everything after the head conv.
  Tensor trunk(const Tensor& features) const;

  const BaselineSRSpec& spec() const { return spec_; }
  const Conv2d& head_conv() const { return head_; }

 private:
  struct Block {
    Conv2d conv1, conv2;
    Tensor res_scale;  // defined when trainable
  };

  BaselineSRSpec spec_;
  Conv2d head_;
  std::vector<Block> blocks_;
  Conv2d body_end_;
  std::vector<Conv2d> up_convs_;
  Tensor up_transposed_weight_, up_transposed_bias_;
  Conv2d tail_;
};

/// DnCNN-style stack: conv+relu, (depth - 2) x conv+relu, conv to RGB.
class DenoiseNet {
 public:
  DenoiseNet() = default;
  DenoiseNet(std::vector<Parameter>& sink, const std::string& prefix, const DenoiserSpec& spec,
             bool with_tail, std::mt19937_64& rng, DType dtype);

  Tensor features(const Tensor& x) const;
  Tensor tail(const Tensor& features) const { return tail_(features); }
  Tensor forward(const Tensor& x) const;

  const DenoiserSpec& spec() const { return spec_; }
  const Conv2d& tail_conv() const { return tail_; }

 private:
  DenoiserSpec spec_;
  std::vector<Conv2d> layers_;
  Conv2d tail_;
};

class Model {
 public:
  virtual ~Model() = default;
  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// 1 x 3 x H x W (0..255 scale) -> 1 x 3 x sH x sW.
  virtual Tensor forward(const Tensor& x) const = 0;
  virtual ModelKind kind() const = 0;
  virtual int scale() const = 0;
  virtual SpecMap spec() const = 0;

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  /// Throws ConfigError for an unknown name.
  Parameter& parameter(const std::string& name);
  const Parameter& parameter(const std::string& name) const;
  bool has_parameter(const std::string& name) const;
  std::int64_t parameter_count() const;

  /// Marks parameters trainable iff their name starts with one of `prefixes`
  /// (empty list = everything). Returns the number of trainable parameters.
  std::size_t set_trainable_prefixes(const std::vector<std::string>& prefixes);

  DType dtype() const { return dtype_; }
  /// Inputs have their per-channel mean removed before forward and restored after.
  bool per_image_mean_shift = true;

 protected:
  SpecMap common_spec() const;
  std::vector<Parameter> params_;
  DType dtype_ = DType::f32;
};

class BaselineModel final : public Model {
 public:
  BaselineModel(const BaselineSRSpec& spec, const BuildOptions& options);
  Tensor forward(const Tensor& x) const override { return net_.forward(x); }
  ModelKind kind() const override { return ModelKind::baseline; }
  int scale() const override { return net_.spec().scale; }
  SpecMap spec() const override;
  const SRNet& net() const { return net_; }

 private:
  SRNet net_;
};

class DenoiserModel final : public Model {
 public:
  DenoiserModel(const DenoiserSpec& spec, const BuildOptions& options);
  Tensor forward(const Tensor& x) const override { return net_.forward(x); }
  ModelKind kind() const override { return ModelKind::denoiser; }
  int scale() const override { return 1; }
  SpecMap spec() const override;
  const DenoiseNet& net() const { return net_; }

 private:
  DenoiseNet net_;
};

/// Denoiser, then an SR network whose head sees (denoised, original).
class DnisrModel final : public Model {
 public:
  DnisrModel(const DenoiserSpec& den, const BaselineSRSpec& sr, const BuildOptions& options);
  Tensor forward(const Tensor& x) const override;
  ModelKind kind() const override { return ModelKind::dnisr; }
  int scale() const override { return sr_.spec().scale; }
  SpecMap spec() const override;
  Tensor denoise(const Tensor& x) const { return den_.forward(x); }

 private:
  DenoiseNet den_;
  SRNet sr_;
};

/// Denoiser features feed the SR trunk through one bridge convolution. With a
/// residual denoiser the input also reaches the trunk through a bias-free skip conv.
class DnsrModel final : public Model {
 public:
  DnsrModel(const DenoiserSpec& den, const BaselineSRSpec& sr, int bridge_kernel, const BuildOptions& options);
  Tensor forward(const Tensor& x) const override;
  ModelKind kind() const override { return ModelKind::dnsr; }
  int scale() const override { return sr_.spec().scale; }
  SpecMap spec() const override;
  int bridge_kernel() const { return bridge_kernel_; }

 private:
  DenoiseNet den_;
  Conv2d bridge_;
  Conv2d skip_;
  SRNet sr_;
  int bridge_kernel_;
};

/// Image pyramid of independent SR networks fused coarse to fine.
class AdrsrModel final : public Model {
 public:
  AdrsrModel(const BaselineSRSpec& sr, int levels, int fuse_kernel, const BuildOptions& options);
  Tensor forward(const Tensor& x) const override { return forward_from(x, 0); }
  /// Reconstruction R_k using only levels k..L-1 (output at HR / 2^k).
  Tensor forward_from(const Tensor& x, int level) const;
  /// Raw per-level SR outputs, finest first.
  std::vector<Tensor> level_outputs(const Tensor& x) const;
  /// Input pyramid: x and its bicubic downscales by 2^k.
  std::vector<Tensor> pyramid(const Tensor& x) const;
  void check_input(const Tensor& x) const;

  ModelKind kind() const override { return ModelKind::adrsr; }
  int scale() const override { return spec_.scale; }
  SpecMap spec() const override;
  int levels() const { return static_cast<int>(nets_.size()); }

 private:
  BaselineSRSpec spec_;
  int fuse_kernel_;
  std::vector<SRNet> nets_;
  std::vector<Conv2d> up_;    // index k: lifts R_{k+1} to R_k resolution
  std::vector<Conv2d> fuse_;  // index k: (out_k, up(R_{k+1})) -> R_k
};

std::unique_ptr<BaselineModel> build_baseline(const BaselineSRSpec& spec, const BuildOptions& options = {});
std::unique_ptr<DenoiserModel> build_denoiser(const DenoiserSpec& spec, const BuildOptions& options = {});

/// Copies the donors; the new head input channels for the original image start at zero.
std::unique_ptr<DnisrModel> build_dnisr(const DenoiserModel& denoiser, const BaselineModel& sr);

/// Replaces the denoiser tail and SR head by their exact kernel composition.
/// bridge_kernel must equal k_tail + k_head - 1.
std::unique_ptr<DnsrModel> build_dnsr(const DenoiserModel& denoiser, const BaselineModel& sr, int bridge_kernel = 5);

std::unique_ptr<AdrsrModel> build_adrsr(const BaselineSRSpec& spec, int levels, int fuse_kernel = 3,
                                        const BuildOptions& options = {});

/// Fresh model of any kind (composites get freshly initialised donors).
std::unique_ptr<Model> build_model(const CompositeSpec& spec, const BuildOptions& options = {});
std::unique_ptr<Model> build_model(const SpecMap& spec);

/// Closed-form parameter counts.
std::int64_t conv_parameter_count(int in_channels, int out_channels, int kernel, bool bias = true);
std::int64_t baseline_parameter_count(const BaselineSRSpec& spec, int in_channels = 3, bool with_head = true);
std::int64_t denoiser_parameter_count(const DenoiserSpec& spec, bool with_tail = true);
std::int64_t composite_parameter_count(const CompositeSpec& spec);

/// Kernel of conv(conv(x, first), second) as one convolution:
/// result[o, c] = sum_m full_correlation(second[o, m], first[m, c]).
/// first is M x C x k1 x k1, second is O x M x k2 x k2; result O x C x (k1 + k2 - 1)^2.
Tensor compose_kernels(const Tensor& first, const Tensor& second);

/// Copies every parameter of `src` into `dst` under `target_prefix + name`.
/// Returns the number of tensors copied; shapes must match.
std::size_t copy_parameters(const Model& src, Model& dst, const std::string& target_prefix);

struct CompositionCheck {
  double full = 0.0;      // over the whole output
  double interior = 0.0;  // ignoring `margin` HR pixels at every border
  int margin = 0;
};

/// Largest |composite - sr(denoiser(x))| / max(1, max |sr(denoiser(x))|) over
/// `trials` random images of side `side`.
CompositionCheck check_dnisr_init(const DenoiserModel& denoiser, const BaselineModel& sr, const DnisrModel& composite,
                                  int trials, std::uint64_t seed, int side = 48);
/// Same for DNSR. Near the border the bridge sees zero-padded features where
/// the two-stage pipeline sees the padded 3-channel intermediate, so only the
/// interior is expected to agree; the margin covers the SR trunk's reach.
CompositionCheck check_dnsr_init(const DenoiserModel& denoiser, const BaselineModel& sr, const DnsrModel& composite,
                                 int trials, std::uint64_t seed, int side = 48);

/// FNV-1a over the raw bytes of every parameter whose name starts with prefix.
std::uint64_t parameter_hash(const Model& model, const std::string& prefix = "");

}  // namespace srlab
