#include "srlab/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "srlab/data.hpp"
#include "srlab/ops.hpp"
#include "srlab/resample.hpp"

namespace srlab {

std::string to_string(Upsampler u) {
  switch (u) {
    case Upsampler::subpixel_direct: return "subpixel_direct";
    case Upsampler::subpixel_chained_x2: return "subpixel_chained_x2";
    case Upsampler::transposed_conv: return "transposed_conv";
  }
  return "?";
}

Upsampler parse_upsampler(const std::string& name) {
  if (name == "subpixel_direct") return Upsampler::subpixel_direct;
  if (name == "subpixel_chained_x2") return Upsampler::subpixel_chained_x2;
  if (name == "transposed_conv") return Upsampler::transposed_conv;
  throw ConfigError("unknown upsampler '" + name +
                    "' (expected subpixel_direct, subpixel_chained_x2 or transposed_conv)");
}

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::baseline: return "baseline";
    case ModelKind::denoiser: return "denoiser";
    case ModelKind::dnisr: return "dnisr";
    case ModelKind::dnsr: return "dnsr";
    case ModelKind::adrsr: return "adrsr";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  for (auto k : {ModelKind::baseline, ModelKind::denoiser, ModelKind::dnisr, ModelKind::dnsr, ModelKind::adrsr})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown model kind '" + name + "' (expected baseline, denoiser, dnisr, dnsr or adrsr)");
}

void BaselineSRSpec::validate() const {
  if (n_blocks < 0) throw ConfigError("n_blocks must be >= 0");
  if (n_feats < 1) throw ConfigError("n_feats must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel must be odd, got " + std::to_string(kernel));
  if (scale < 2) throw ConfigError("scale must be >= 2, got " + std::to_string(scale));
  const bool power_of_two = std::has_single_bit(static_cast<unsigned>(scale));
  if (upsampler == Upsampler::subpixel_chained_x2 && !power_of_two)
    throw ConfigError("subpixel_chained_x2 needs a power-of-two scale, got " + std::to_string(scale));
  if (upsampler == Upsampler::transposed_conv && scale % 2 != 0)
    throw ConfigError("transposed_conv needs an even scale, got " + std::to_string(scale));
  if (scale != 2 && scale != 4 && scale != 8 && upsampler != Upsampler::subpixel_direct)
    throw ConfigError("scale " + std::to_string(scale) + " is only supported by subpixel_direct");
}

void DenoiserSpec::validate() const {
  if (depth < 3) throw ConfigError("denoiser depth must be >= 3, got " + std::to_string(depth));
  if (n_feats < 1) throw ConfigError("denoiser n_feats must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("denoiser kernel must be odd, got " + std::to_string(kernel));
}

namespace {

Tensor he_normal(const Shape& shape, double fan_in, std::mt19937_64& rng, DType dtype) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  std::vector<double> v(static_cast<std::size_t>(numel_of(shape)));
  for (double& x : v) x = dist(rng);
  Tensor t = Tensor::from_vector(shape, std::move(v));
  return dtype == DType::f64 ? t : t.to(dtype);
}

Tensor add_parameter(std::vector<Parameter>& sink, const std::string& name, Tensor value) {
  value.set_requires_grad(true);
  sink.push_back({name, value, true});
  return value;
}

void fill(Tensor& t, double value) {
  visit_dtype(t.dtype(), [&]<typename T>() {
    for (T& x : t.data<T>()) x = static_cast<T>(value);
  });
}

void set_element(Tensor& t, std::int64_t flat, double value) {
  visit_dtype(t.dtype(), [&]<typename T>() { t.data<T>()[static_cast<std::size_t>(flat)] = static_cast<T>(value); });
}

int log2_int(int v) { return std::countr_zero(static_cast<unsigned>(v)); }

}  // namespace

Conv2d::Conv2d(std::vector<Parameter>& sink, const std::string& name, int in_channels, int out_channels,
               int kernel, std::mt19937_64& rng, DType dtype, bool with_bias)
    : padding(kernel / 2) {
  weight = add_parameter(sink, name + ".weight",
                         he_normal({out_channels, in_channels, kernel, kernel},
                                   static_cast<double>(in_channels) * kernel * kernel, rng, dtype));
  if (with_bias) bias = add_parameter(sink, name + ".bias", Tensor::zeros({out_channels}, dtype));
}

Tensor Conv2d::operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, 1, padding); }

SRNet::SRNet(std::vector<Parameter>& sink, const std::string& prefix, const BaselineSRSpec& spec, int in_channels,
             bool with_head, std::mt19937_64& rng, DType dtype)
    : spec_(spec) {
  spec.validate();
  const int f = spec.n_feats, k = spec.kernel, s = spec.scale;
  if (with_head) head_ = Conv2d(sink, prefix + "head", in_channels, f, k, rng, dtype);
  for (int i = 0; i < spec.n_blocks; ++i) {
    const std::string p = prefix + "body." + std::to_string(i) + ".";
    Block b;
    b.conv1 = Conv2d(sink, p + "conv1", f, f, k, rng, dtype);
    b.conv2 = Conv2d(sink, p + "conv2", f, f, k, rng, dtype);
    if (spec.residual_scale_trainable)
      b.res_scale = add_parameter(sink, p + "res_scale", Tensor::full({1}, spec.residual_scale_init, dtype));
    blocks_.push_back(std::move(b));
  }
  body_end_ = Conv2d(sink, prefix + "body_end", f, f, k, rng, dtype);
  switch (spec.upsampler) {
    case Upsampler::subpixel_direct:
      up_convs_.emplace_back(sink, prefix + "upsample.0", f, f * s * s, k, rng, dtype);
      break;
    case Upsampler::subpixel_chained_x2:
      for (int j = 0; j < log2_int(s); ++j)
        up_convs_.emplace_back(sink, prefix + "upsample." + std::to_string(j), f, 4 * f, k, rng, dtype);
      break;
    case Upsampler::transposed_conv: {
      // Each output pixel receives f * (2s / s)^2 contributions.
      up_transposed_weight_ = add_parameter(sink, prefix + "upsample.0.weight",
                                            he_normal({f, f, 2 * s, 2 * s}, 4.0 * f, rng, dtype));
      up_transposed_bias_ = add_parameter(sink, prefix + "upsample.0.bias", Tensor::zeros({f}, dtype));
      break;
    }
  }
  tail_ = Conv2d(sink, prefix + "tail", f, 3, k, rng, dtype);
}

Tensor SRNet::trunk(const Tensor& features) const {
  Tensor x = features;
  for (const auto& b : blocks_) {
    Tensor r = b.conv2(ops::relu(b.conv1(x)));
    r = b.res_scale.defined() ? ops::mul_learned(r, b.res_scale) : ops::mul_scalar(r, spec_.residual_scale_init);
    x = ops::add(x, r);
  }
  x = ops::add(body_end_(x), features);
  switch (spec_.upsampler) {
    case Upsampler::subpixel_direct: x = ops::pixel_shuffle(up_convs_[0](x), spec_.scale); break;
    case Upsampler::subpixel_chained_x2:
      for (const auto& c : up_convs_) x = ops::pixel_shuffle(c(x), 2);
      break;
    case Upsampler::transposed_conv:
      x = ops::conv_transpose2d(x, up_transposed_weight_, up_transposed_bias_, spec_.scale, spec_.scale / 2);
      break;
  }
  return tail_(x);
}

DenoiseNet::DenoiseNet(std::vector<Parameter>& sink, const std::string& prefix, const DenoiserSpec& spec,
                       bool with_tail, std::mt19937_64& rng, DType dtype)
    : spec_(spec) {
  spec.validate();
  layers_.emplace_back(sink, prefix + "layers.0", 3, spec.n_feats, spec.kernel, rng, dtype);
  for (int i = 1; i < spec.depth - 1; ++i)
    layers_.emplace_back(sink, prefix + "layers." + std::to_string(i), spec.n_feats, spec.n_feats, spec.kernel, rng,
                         dtype);
  if (with_tail) tail_ = Conv2d(sink, prefix + "tail", spec.n_feats, 3, spec.kernel, rng, dtype);
}

Tensor DenoiseNet::features(const Tensor& x) const {
  Tensor h = x;
  for (const auto& layer : layers_) h = ops::relu(layer(h));
  return h;
}

Tensor DenoiseNet::forward(const Tensor& x) const {
  const Tensor t = tail(features(x));
  return spec_.residual_output ? ops::sub(x, t) : t;
}

Parameter& Model::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ConfigError("model has no parameter named '" + name + "'");
}

const Parameter& Model::parameter(const std::string& name) const {
  return const_cast<Model*>(this)->parameter(name);
}

bool Model::has_parameter(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

std::size_t Model::set_trainable_prefixes(const std::vector<std::string>& prefixes) {
  std::size_t count = 0;
  for (auto& p : params_) {
    p.trainable = prefixes.empty() || std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& pre) {
                    return p.name.compare(0, pre.size(), pre) == 0;
                  });
    p.value.set_requires_grad(p.trainable);
    count += p.trainable ? 1 : 0;
  }
  return count;
}

SpecMap Model::common_spec() const {
  return {{"kind", static_cast<double>(kind())},
          {"scale", static_cast<double>(scale())},
          {"dtype", static_cast<double>(dtype_)},
          {"mean_shift", per_image_mean_shift ? 1.0 : 0.0}};
}

namespace {

void put_sr(SpecMap& m, const BaselineSRSpec& s) {
  m["sr.n_blocks"] = s.n_blocks;
  m["sr.n_feats"] = s.n_feats;
  m["sr.kernel"] = s.kernel;
  m["sr.scale"] = s.scale;
  m["sr.upsampler"] = static_cast<double>(s.upsampler);
  m["sr.residual_scale_init"] = s.residual_scale_init;
  m["sr.residual_scale_trainable"] = s.residual_scale_trainable ? 1.0 : 0.0;
}

void put_den(SpecMap& m, const DenoiserSpec& s) {
  m["den.depth"] = s.depth;
  m["den.n_feats"] = s.n_feats;
  m["den.kernel"] = s.kernel;
  m["den.residual_output"] = s.residual_output ? 1.0 : 0.0;
}

double need(const SpecMap& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw CheckpointError("model description lacks '" + key + "'");
  return it->second;
}

BaselineSRSpec get_sr(const SpecMap& m) {
  BaselineSRSpec s;
  s.n_blocks = static_cast<int>(need(m, "sr.n_blocks"));
  s.n_feats = static_cast<int>(need(m, "sr.n_feats"));
  s.kernel = static_cast<int>(need(m, "sr.kernel"));
  s.scale = static_cast<int>(need(m, "sr.scale"));
  s.upsampler = static_cast<Upsampler>(static_cast<int>(need(m, "sr.upsampler")));
  s.residual_scale_init = need(m, "sr.residual_scale_init");
  s.residual_scale_trainable = need(m, "sr.residual_scale_trainable") != 0.0;
  return s;
}

DenoiserSpec get_den(const SpecMap& m) {
  DenoiserSpec s;
  s.depth = static_cast<int>(need(m, "den.depth"));
  s.n_feats = static_cast<int>(need(m, "den.n_feats"));
  s.kernel = static_cast<int>(need(m, "den.kernel"));
  s.residual_output = need(m, "den.residual_output") != 0.0;
  return s;
}

}  // namespace

BaselineModel::BaselineModel(const BaselineSRSpec& spec, const BuildOptions& options) {
  dtype_ = options.dtype;
  std::mt19937_64 rng(options.seed);
  net_ = SRNet(params_, "", spec, 3, true, rng, dtype_);
}

SpecMap BaselineModel::spec() const {
  SpecMap m = common_spec();
  put_sr(m, net_.spec());
  return m;
}

DenoiserModel::DenoiserModel(const DenoiserSpec& spec, const BuildOptions& options) {
  dtype_ = options.dtype;
  std::mt19937_64 rng(options.seed);
  net_ = DenoiseNet(params_, "", spec, true, rng, dtype_);
}

SpecMap DenoiserModel::spec() const {
  SpecMap m = common_spec();
  put_den(m, net_.spec());
  return m;
}

DnisrModel::DnisrModel(const DenoiserSpec& den, const BaselineSRSpec& sr, const BuildOptions& options) {
  dtype_ = options.dtype;
  std::mt19937_64 rng(options.seed);
  den_ = DenoiseNet(params_, "denoiser.", den, true, rng, dtype_);
  sr_ = SRNet(params_, "sr.", sr, 6, true, rng, dtype_);
  // The original-image channels of the head start switched off.
  Tensor w = parameter("sr.head.weight").value;
  const std::int64_t out = w.dim(0), k2 = w.dim(2) * w.dim(3);
  for (std::int64_t o = 0; o < out; ++o)
    for (std::int64_t c = 3; c < 6; ++c)
      for (std::int64_t i = 0; i < k2; ++i) set_element(w, (o * 6 + c) * k2 + i, 0.0);
}

Tensor DnisrModel::forward(const Tensor& x) const {
  return sr_.forward(ops::concat_channels({den_.forward(x), x}));
}

SpecMap DnisrModel::spec() const {
  SpecMap m = common_spec();
  put_sr(m, sr_.spec());
  put_den(m, den_.spec());
  return m;
}

DnsrModel::DnsrModel(const DenoiserSpec& den, const BaselineSRSpec& sr, int bridge_kernel,
                     const BuildOptions& options)
    : bridge_kernel_(bridge_kernel) {
  if (bridge_kernel != den.kernel + sr.kernel - 1)
    throw ConfigError("bridge kernel " + std::to_string(bridge_kernel) + " is incompatible with donor kernels " +
                      std::to_string(den.kernel) + " and " + std::to_string(sr.kernel) + " (expected " +
                      std::to_string(den.kernel + sr.kernel - 1) + ")");
  dtype_ = options.dtype;
  std::mt19937_64 rng(options.seed);
  den_ = DenoiseNet(params_, "denoiser.", den, false, rng, dtype_);
  bridge_ = Conv2d(params_, "bridge", den.n_feats, sr.n_feats, bridge_kernel, rng, dtype_);
  if (den.residual_output) skip_ = Conv2d(params_, "skip", 3, sr.n_feats, sr.kernel, rng, dtype_, false);
  sr_ = SRNet(params_, "sr.", sr, 3, false, rng, dtype_);
}

Tensor DnsrModel::forward(const Tensor& x) const {
  Tensor h = bridge_(den_.features(x));
  if (skip_.weight.defined()) h = ops::add(h, skip_(x));
  return sr_.trunk(h);
}

SpecMap DnsrModel::spec() const {
  SpecMap m = common_spec();
  put_sr(m, sr_.spec());
  put_den(m, den_.spec());
  m["bridge_kernel"] = bridge_kernel_;
  return m;
}

AdrsrModel::AdrsrModel(const BaselineSRSpec& sr, int levels, int fuse_kernel, const BuildOptions& options)
    : spec_(sr), fuse_kernel_(fuse_kernel) {
  if (levels < 1) throw ConfigError("adrsr levels must be >= 1, got " + std::to_string(levels));
  if (fuse_kernel < 1 || fuse_kernel % 2 == 0) throw ConfigError("fuse_kernel must be odd");
  dtype_ = options.dtype;
  std::mt19937_64 rng(options.seed);
  for (int k = 0; k < levels; ++k) nets_.emplace_back(params_, "level" + std::to_string(k) + ".", sr, 3, true, rng, dtype_);
  for (int k = 0; k + 1 < levels; ++k) {
    Conv2d up(params_, "up" + std::to_string(k), 3, 12, 3, rng, dtype_);
    fill(up.weight, 0.0);
    // Nearest-neighbour start: every sub-pixel copies the centre tap of its channel.
    for (int c = 0; c < 3; ++c)
      for (int sub = 0; sub < 4; ++sub) set_element(up.weight, (((c * 4 + sub) * 3 + c) * 3 + 1) * 3 + 1, 1.0);
    Conv2d fuse(params_, "fuse" + std::to_string(k), 6, 3, fuse_kernel, rng, dtype_);
    fill(fuse.weight, 0.0);
    const int centre = fuse_kernel / 2;
    for (int c = 0; c < 3; ++c)
      set_element(fuse.weight, ((c * 6 + c) * fuse_kernel + centre) * fuse_kernel + centre, 1.0);
    up_.push_back(std::move(up));
    fuse_.push_back(std::move(fuse));
  }
}

void AdrsrModel::check_input(const Tensor& x) const {
  if (x.rank() != 4) throw ShapeError("adrsr: expected N x 3 x H x W input");
  const int levels = this->levels();
  if (levels == 1) return;
  const std::int64_t h = x.dim(2), w = x.dim(3);
  const std::int64_t step = std::int64_t{1} << (levels - 1);
  const double max_levels = std::floor(std::log2(static_cast<double>(std::min(h, w)))) - 2.0;
  if (h % step != 0 || w % step != 0 || levels > max_levels)
    throw ShapeError("adrsr: " + std::to_string(levels) + " levels need an input whose sides are multiples of " +
                     std::to_string(step) + " and at least " + std::to_string(std::int64_t{1} << (levels + 2)) +
                     ", got " + shape_str(x.shape()));
}

std::vector<Tensor> AdrsrModel::pyramid(const Tensor& x) const {
  check_input(x);
  std::vector<Tensor> p{x};
  for (int k = 1; k < levels(); ++k) p.push_back(bicubic_resample(x.detach(), Ratio{1, 1 << k}));
  return p;
}

Tensor AdrsrModel::forward_from(const Tensor& x, int level) const {
  if (level < 0 || level >= levels())
    throw ConfigError("adrsr level " + std::to_string(level) + " out of range 0.." + std::to_string(levels() - 1));
  const auto p = pyramid(x);
  const int last = levels() - 1;
  Tensor r = nets_[static_cast<std::size_t>(last)].forward(p[static_cast<std::size_t>(last)]);
  for (int k = last - 1; k >= level; --k) {
    const auto ku = static_cast<std::size_t>(k);
    const Tensor out_k = nets_[ku].forward(p[ku]);
    const Tensor coarse = ops::pixel_shuffle(up_[ku](r), 2);
    r = fuse_[ku](ops::concat_channels({out_k, coarse}));
  }
  return r;
}

std::vector<Tensor> AdrsrModel::level_outputs(const Tensor& x) const {
  const auto p = pyramid(x);
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < nets_.size(); ++k) out.push_back(nets_[k].forward(p[k]));
  return out;
}

SpecMap AdrsrModel::spec() const {
  SpecMap m = common_spec();
  put_sr(m, spec_);
  m["levels"] = levels();
  m["fuse_kernel"] = fuse_kernel_;
  return m;
}

std::unique_ptr<BaselineModel> build_baseline(const BaselineSRSpec& spec, const BuildOptions& options) {
  return std::make_unique<BaselineModel>(spec, options);
}

std::unique_ptr<DenoiserModel> build_denoiser(const DenoiserSpec& spec, const BuildOptions& options) {
  return std::make_unique<DenoiserModel>(spec, options);
}

namespace {

void check_donor_dtypes(const Model& a, const Model& b) {
  if (a.dtype() != b.dtype()) throw ConfigError("donor models have different dtypes");
}

}  // namespace

std::unique_ptr<DnisrModel> build_dnisr(const DenoiserModel& denoiser, const BaselineModel& sr) {
  check_donor_dtypes(denoiser, sr);
  const Tensor& head = sr.net().head_conv().weight;
  if (head.dim(1) != 3)
    throw ConfigError("dnisr: SR head must take 3 channels, donor head takes " + std::to_string(head.dim(1)));
  auto model = std::make_unique<DnisrModel>(denoiser.net().spec(), sr.net().spec(), BuildOptions{0, sr.dtype()});
  copy_parameters(denoiser, *model, "denoiser.");
  for (const auto& p : sr.parameters()) {
    if (p.name == "head.weight") continue;
    model->parameter("sr." + p.name).value.copy_from(p.value);
  }
  Tensor wide = model->parameter("sr.head.weight").value;
  const std::int64_t out = head.dim(0), k2 = head.dim(2) * head.dim(3);
  visit_dtype(head.dtype(), [&]<typename T>() {
    auto src = head.data<T>();
    auto dst = wide.data<T>();
    for (std::int64_t o = 0; o < out; ++o)
      for (std::int64_t c = 0; c < 6; ++c)
        for (std::int64_t i = 0; i < k2; ++i)
          dst[static_cast<std::size_t>((o * 6 + c) * k2 + i)] =
              c < 3 ? src[static_cast<std::size_t>((o * 3 + c) * k2 + i)] : T(0);
  });
  model->per_image_mean_shift = sr.per_image_mean_shift;
  return model;
}

Tensor compose_kernels(const Tensor& first, const Tensor& second) {
  if (first.rank() != 4 || second.rank() != 4 || second.dim(1) != first.dim(0))
    throw ShapeError("compose_kernels: " + shape_str(second.shape()) + " cannot follow " + shape_str(first.shape()));
  const std::int64_t mid = first.dim(0), cin = first.dim(1), k1 = first.dim(2);
  const std::int64_t cout = second.dim(0), k2 = second.dim(2);
  const std::int64_t kb = k1 + k2 - 1;
  const auto a = first.to_doubles();
  const auto b = second.to_doubles();
  std::vector<double> out(static_cast<std::size_t>(cout * cin * kb * kb), 0.0);
  for (std::int64_t o = 0; o < cout; ++o)
    for (std::int64_t m = 0; m < mid; ++m)
      for (std::int64_t p = 0; p < k2; ++p)
        for (std::int64_t q = 0; q < k2; ++q) {
          const double w2 = b[static_cast<std::size_t>(((o * mid + m) * k2 + p) * k2 + q)];
          for (std::int64_t c = 0; c < cin; ++c)
            for (std::int64_t u = 0; u < k1; ++u)
              for (std::int64_t v = 0; v < k1; ++v)
                out[static_cast<std::size_t>(((o * cin + c) * kb + p + u) * kb + q + v)] +=
                    w2 * a[static_cast<std::size_t>(((m * cin + c) * k1 + u) * k1 + v)];
        }
  Tensor t = Tensor::from_vector({cout, cin, kb, kb}, std::move(out));
  return first.dtype() == DType::f64 ? t : t.to(first.dtype());
}

std::unique_ptr<DnsrModel> build_dnsr(const DenoiserModel& denoiser, const BaselineModel& sr, int bridge_kernel) {
  check_donor_dtypes(denoiser, sr);
  const Conv2d& tail = denoiser.net().tail_conv();
  const Conv2d& head = sr.net().head_conv();
  if (tail.weight.dim(0) != head.weight.dim(1))
    throw ConfigError("dnsr: denoiser emits " + std::to_string(tail.weight.dim(0)) + " channels but SR head takes " +
                      std::to_string(head.weight.dim(1)));
  auto model = std::make_unique<DnsrModel>(denoiser.net().spec(), sr.net().spec(), bridge_kernel,
                                           BuildOptions{0, sr.dtype()});
  for (const auto& p : denoiser.parameters())
    if (p.name.rfind("tail.", 0) != 0) model->parameter("denoiser." + p.name).value.copy_from(p.value);
  for (const auto& p : sr.parameters())
    if (p.name.rfind("head.", 0) != 0) model->parameter("sr." + p.name).value.copy_from(p.value);

  // head(x - tail(h)) = head_w * x + head_b - (head o tail)(h) for a residual denoiser.
  const double sign = denoiser.net().spec().residual_output ? -1.0 : 1.0;
  const Tensor composed = compose_kernels(tail.weight, head.weight);
  const auto hw = head.weight.to_doubles();
  const auto hb = head.bias.to_doubles();
  const auto tb = tail.bias.to_doubles();
  const std::int64_t fs = head.weight.dim(0), k2 = head.weight.dim(2) * head.weight.dim(3);
  std::vector<double> bias(static_cast<std::size_t>(fs));
  for (std::int64_t o = 0; o < fs; ++o) {
    double acc = 0.0;
    for (std::int64_t m = 0; m < 3; ++m) {
      double tap_sum = 0.0;
      for (std::int64_t i = 0; i < k2; ++i) tap_sum += hw[static_cast<std::size_t>((o * 3 + m) * k2 + i)];
      acc += tap_sum * tb[static_cast<std::size_t>(m)];
    }
    bias[static_cast<std::size_t>(o)] = hb[static_cast<std::size_t>(o)] + sign * acc;
  }
  Tensor bridge_w = sign < 0 ? ops::mul_scalar(composed, -1.0) : composed;
  Tensor bridge_b = Tensor::from_vector({fs}, std::move(bias));
  model->parameter("bridge.weight").value.copy_from(bridge_w.detach());
  model->parameter("bridge.bias").value.copy_from(bridge_b.to(sr.dtype()));
  if (sign < 0) model->parameter("skip.weight").value.copy_from(head.weight);
  model->per_image_mean_shift = sr.per_image_mean_shift;
  return model;
}

std::unique_ptr<AdrsrModel> build_adrsr(const BaselineSRSpec& spec, int levels, int fuse_kernel,
                                        const BuildOptions& options) {
  return std::make_unique<AdrsrModel>(spec, levels, fuse_kernel, options);
}

std::unique_ptr<Model> build_model(const CompositeSpec& spec, const BuildOptions& options) {
  switch (spec.kind) {
    case ModelKind::baseline: return build_baseline(spec.sr, options);
    case ModelKind::denoiser: return build_denoiser(spec.denoiser, options);
    case ModelKind::dnisr:
    case ModelKind::dnsr: {
      auto den = build_denoiser(spec.denoiser, {derive_seed(options.seed, 1), options.dtype});
      auto sr = build_baseline(spec.sr, {derive_seed(options.seed, 2), options.dtype});
      if (spec.kind == ModelKind::dnisr) return build_dnisr(*den, *sr);
      return build_dnsr(*den, *sr, spec.bridge_kernel);
    }
    case ModelKind::adrsr: return build_adrsr(spec.sr, spec.levels, spec.fuse_kernel, options);
  }
  throw ConfigError("unknown model kind");
}

std::unique_ptr<Model> build_model(const SpecMap& spec) {
  const auto kind = static_cast<ModelKind>(static_cast<int>(need(spec, "kind")));
  const BuildOptions options{0, static_cast<DType>(static_cast<int>(need(spec, "dtype")))};
  std::unique_ptr<Model> model;
  switch (kind) {
    case ModelKind::baseline: model = std::make_unique<BaselineModel>(get_sr(spec), options); break;
    case ModelKind::denoiser: model = std::make_unique<DenoiserModel>(get_den(spec), options); break;
    case ModelKind::dnisr: model = std::make_unique<DnisrModel>(get_den(spec), get_sr(spec), options); break;
    case ModelKind::dnsr:
      model = std::make_unique<DnsrModel>(get_den(spec), get_sr(spec), static_cast<int>(need(spec, "bridge_kernel")),
                                          options);
      break;
    case ModelKind::adrsr:
      model = std::make_unique<AdrsrModel>(get_sr(spec), static_cast<int>(need(spec, "levels")),
                                           static_cast<int>(need(spec, "fuse_kernel")), options);
      break;
    default: throw CheckpointError("unknown model kind code " + std::to_string(static_cast<int>(kind)));
  }
  model->per_image_mean_shift = need(spec, "mean_shift") != 0.0;
  return model;
}

std::int64_t conv_parameter_count(int in_channels, int out_channels, int kernel, bool bias) {
  return static_cast<std::int64_t>(in_channels) * out_channels * kernel * kernel + (bias ? out_channels : 0);
}

std::int64_t baseline_parameter_count(const BaselineSRSpec& s, int in_channels, bool with_head) {
  const int f = s.n_feats, k = s.kernel;
  std::int64_t n = with_head ? conv_parameter_count(in_channels, f, k) : 0;
  n += s.n_blocks * (2 * conv_parameter_count(f, f, k) + (s.residual_scale_trainable ? 1 : 0));
  n += conv_parameter_count(f, f, k);
  switch (s.upsampler) {
    case Upsampler::subpixel_direct: n += conv_parameter_count(f, f * s.scale * s.scale, k); break;
    case Upsampler::subpixel_chained_x2: n += log2_int(s.scale) * conv_parameter_count(f, 4 * f, k); break;
    case Upsampler::transposed_conv: n += conv_parameter_count(f, f, 2 * s.scale); break;
  }
  return n + conv_parameter_count(f, 3, k);
}

std::int64_t denoiser_parameter_count(const DenoiserSpec& s, bool with_tail) {
  std::int64_t n = conv_parameter_count(3, s.n_feats, s.kernel);
  n += (s.depth - 2) * conv_parameter_count(s.n_feats, s.n_feats, s.kernel);
  if (with_tail) n += conv_parameter_count(s.n_feats, 3, s.kernel);
  return n;
}

std::int64_t composite_parameter_count(const CompositeSpec& s) {
  switch (s.kind) {
    case ModelKind::baseline: return baseline_parameter_count(s.sr);
    case ModelKind::denoiser: return denoiser_parameter_count(s.denoiser);
    case ModelKind::dnisr: return denoiser_parameter_count(s.denoiser) + baseline_parameter_count(s.sr, 6);
    case ModelKind::dnsr:
      return denoiser_parameter_count(s.denoiser, false) +
             conv_parameter_count(s.denoiser.n_feats, s.sr.n_feats, s.bridge_kernel) +
             (s.denoiser.residual_output ? conv_parameter_count(3, s.sr.n_feats, s.sr.kernel, false) : 0) +
             baseline_parameter_count(s.sr, 3, false);
    case ModelKind::adrsr:
      return s.levels * baseline_parameter_count(s.sr) +
             (s.levels - 1) * (conv_parameter_count(3, 12, 3) + conv_parameter_count(6, 3, s.fuse_kernel));
  }
  return 0;
}

std::size_t copy_parameters(const Model& src, Model& dst, const std::string& target_prefix) {
  std::size_t n = 0;
  for (const auto& p : src.parameters()) {
    Parameter& target = dst.parameter(target_prefix + p.name);
    if (target.value.shape() != p.value.shape())
      throw ConfigError("shape mismatch copying '" + p.name + "': " + shape_str(p.value.shape()) + " into " +
                        shape_str(target.value.shape()));
    target.value.copy_from(p.value.to(target.value.dtype()));
    ++n;
  }
  return n;
}

std::uint64_t parameter_hash(const Model& model, const std::string& prefix) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : model.parameters()) {
    if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
    mix(p.name.data(), p.name.size());
    visit_dtype(p.value.dtype(), [&]<typename T>() {
      auto d = p.value.data<T>();
      mix(d.data(), d.size_bytes());
    });
  }
  return h;
}

namespace {

CompositionCheck compare_with_two_stage(const DenoiserModel& denoiser, const BaselineModel& sr, const Model& composite,
                                        int trials, std::uint64_t seed, int side, int margin) {
  NoGradGuard no_grad;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pixel(0.0, 255.0);
  CompositionCheck result;
  result.margin = margin;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> v(static_cast<std::size_t>(3 * side * side));
    for (auto& x : v) x = pixel(rng);
    const Tensor input = Tensor::from_vector({1, 3, side, side}, std::move(v)).to(composite.dtype());
    const auto ref = sr.forward(denoiser.forward(input)).to_doubles();
    const auto out = composite.forward(input).to_doubles();
    const std::int64_t hw = static_cast<std::int64_t>(side) * sr.scale();
    double peak = 1.0, full = 0.0, interior = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) peak = std::max(peak, std::abs(ref[i]));
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const double d = std::abs(out[i] - ref[i]);
      full = std::max(full, d);
      const std::int64_t x = static_cast<std::int64_t>(i) % hw, y = static_cast<std::int64_t>(i) / hw % hw;
      if (x >= margin && y >= margin && x < hw - margin && y < hw - margin) interior = std::max(interior, d);
    }
    result.full = std::max(result.full, full / peak);
    result.interior = std::max(result.interior, interior / peak);
  }
  return result;
}

}  // namespace

CompositionCheck check_dnisr_init(const DenoiserModel& denoiser, const BaselineModel& sr, const DnisrModel& composite,
                                  int trials, std::uint64_t seed, int side) {
  return compare_with_two_stage(denoiser, sr, composite, trials, seed, side, 0);
}

CompositionCheck check_dnsr_init(const DenoiserModel& denoiser, const BaselineModel& sr, const DnsrModel& composite,
                                 int trials, std::uint64_t seed, int side) {
  const auto& s = sr.net().spec();
  const int r = s.kernel / 2;
  // Bridge disagreement reaches head radius into the image; every later LR
  // conv widens it by r, plus one LR pixel for a transposed upsampler.
  const int lr_margin = r + (2 * s.n_blocks + 1 + 1) * r + 1;
  const int margin = s.scale * lr_margin + r;
  if (2 * margin >= side * s.scale)
    throw ShapeError("check_dnsr_init: side " + std::to_string(side) + " leaves no interior at margin " +
                     std::to_string(margin));
  return compare_with_two_stage(denoiser, sr, composite, trials, seed, side, margin);
}

}  // namespace srlab
