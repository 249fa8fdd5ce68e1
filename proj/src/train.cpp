#include "srlab/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "srlab/metrics.hpp"
#include "srlab/ops.hpp"
#include "srlab/resample.hpp"
#include "srlab/runtime.hpp"

namespace srlab {

namespace fs = std::filesystem;

std::string to_string(LossKind k) { return k == LossKind::l1 ? "l1" : "l1_plus_edge"; }

LossKind parse_loss_kind(const std::string& name) {
  if (name == "l1") return LossKind::l1;
  if (name == "l1_plus_edge") return LossKind::l1_plus_edge;
  throw ConfigError("unknown loss '" + name + "' (expected l1 or l1_plus_edge)");
}

void TrainConfig::validate() const {
  auto positive = [](const char* name, double v) {
    if (!(v > 0)) throw ConfigError(std::string("train.") + name + " must be positive");
  };
  if (steps < 0) throw ConfigError("train.steps must be non-negative");
  positive("batch", batch);
  positive("lr", lr);
  positive("lr_halve_every", static_cast<double>(lr_halve_every));
  positive("val_every", static_cast<double>(val_every));
  positive("checkpoint_every", static_cast<double>(checkpoint_every));
  if (!(edge_weight >= 0)) throw ConfigError("train.edge_weight must be >= 0");
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  return ops::mean(ops::abs(ops::sub(pred, target)));
}

Tensor edge_loss(const Tensor& pred, const Tensor& target, double edge_weight) {
  const Tensor base = l1_loss(pred, target);
  const Tensor edges = ops::mean(ops::abs(ops::sub(ops::sobel(pred), ops::sobel(target))));
  return ops::add(base, ops::mul_scalar(edges, edge_weight));
}

Tensor training_loss(const Tensor& pred, const Tensor& target, const TrainConfig& cfg) {
  return cfg.loss == LossKind::l1 ? l1_loss(pred, target) : edge_loss(pred, target, cfg.edge_weight);
}

void write_metrics_csv(const fs::path& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  auto cell = [](double v) {
    if (std::isnan(v)) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "step,loss,val_psnr,val_ssim,lr\n";
  for (const auto& r : rows)
    out << r.step << "," << cell(r.loss) << "," << cell(r.val_psnr) << "," << cell(r.val_ssim) << "," << cell(r.lr)
        << "\n";
}

std::vector<ImagePair> denoising_pairs(const std::vector<ImagePair>& pairs, const DegradationSpec& degradation) {
  DegradationSpec clean = degradation;
  clean.noise_sigma = 0.0;
  std::vector<ImagePair> out;
  for (const auto& p : pairs) {
    check_aligned(p, degradation.scale);
    out.push_back({p.stem, make_lr(p.hr, clean), p.lr});
  }
  return out;
}

namespace {

ImageBuffer downscaled_target(const ImageBuffer& hr, int level) {
  if (level == 0) return hr;
  return to_image(bicubic_resample(to_tensor(hr, DType::f64), Ratio{1, 1 << level}));
}

// Mean-shifted, gradient-free forward through an arbitrary model head.
Upscaler shifted(const Model& model, std::function<Tensor(const Tensor&)> forward) {
  return [&model, forward = std::move(forward)](const Tensor& lr) {
    NoGradGuard no_grad;
    Tensor x = lr.to(model.dtype());
    std::array<double, 3> mean{};
    if (model.per_image_mean_shift) {
      mean = channel_means(x);
      x = shift_channels(x, mean, -1.0);
    }
    Tensor y = forward(x);
    if (model.per_image_mean_shift) y = shift_channels(y, mean, 1.0);
    return y.to(DType::f32);
  };
}

PatchConfig patch_config_for(const Model& model, const TrainData& data, std::uint64_t seed) {
  if (data.train.empty()) throw DataError("training set is empty");
  if (data.patch.scale != model.scale())
    throw ConfigError("dataset scale x" + std::to_string(data.patch.scale) + " does not match model scale x" +
                      std::to_string(model.scale()));
  PatchConfig patch = data.patch;
  patch.per_image_mean_shift = model.per_image_mean_shift;
  patch.seed = seed;
  return patch;
}

std::uint64_t fnv_frozen(const Model& model) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ull;
  };
  for (const auto& p : model.parameters()) {
    if (p.trainable) continue;
    mix(p.name.data(), p.name.size());
    visit_dtype(p.value.dtype(), [&]<typename T>() {
      const auto d = p.value.data<T>();
      mix(d.data(), d.size_bytes());
    });
  }
  return h;
}

// One optimisation step; returns the loss before the update.
double run_step(Model& model, const Tensor& pred_input, const Tensor& target,
                const std::function<Tensor(const Tensor&)>& forward, const TrainConfig& cfg, Adam& optimizer,
                std::int64_t step, double lr) {
  auto& params = model.parameters();
  zero_grads(params);
  double value = 0.0;
  try {
    const Tensor x = pred_input.to(model.dtype());
    const Tensor pred = forward(x);
    const Tensor loss = training_loss(pred, target.to(model.dtype()), cfg);
    value = loss.item();
    if (!std::isfinite(value)) throw NumericalError("loss is " + std::to_string(value));
    loss.backward();
  } catch (const NumericalError& e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", lr);
    throw NumericalError("training aborted at step " + std::to_string(step) + " (lr " + buf + "): " + e.what());
  }
  optimizer.set_lr(lr);
  optimizer.step(params);
  return value;
}

}  // namespace

std::pair<double, double> validation_scores(const Upscaler& f, const std::vector<ImagePair>& val, int scale,
                                            int level) {
  if (val.empty()) return {std::nan(""), std::nan("")};
  MetricOptions opt;
  opt.crop_border = scale;
  std::vector<double> p(val.size()), s(val.size());
  parallel_for(val.size(), [&](std::size_t i) {
    const ImageBuffer target = downscaled_target(val[i].hr, level);
    const ImageBuffer sr = to_image(f(to_tensor(val[i].lr)));
    p[i] = psnr(sr, target, opt);
    s[i] = ssim(sr, target, opt);
  });
  return {aggregate(p).mean, aggregate(s).mean};
}

std::vector<MetricsRow> train(Model& model, const TrainData& data, const TrainConfig& cfg, Adam& optimizer,
                              const TrainHooks& hooks) {
  cfg.validate();
  const std::int64_t start = optimizer.steps_taken();
  PatchSampler sampler(&data.train, patch_config_for(model, data, derive_seed(cfg.seed, static_cast<std::uint64_t>(start))));
  auto forward = [&model](const Tensor& x) { return model.forward(x); };
  const Upscaler val_f = model_upscaler(model);
  std::vector<MetricsRow> log;
  for (std::int64_t step = start + 1; step <= cfg.steps; ++step) {
    const double lr = halved_lr(cfg.lr, step - 1, cfg.lr_halve_every);
    const auto [hr, lr_batch] = sampler.next_batch(cfg.batch);
    MetricsRow row;
    row.step = step;
    row.lr = lr;
    row.loss = run_step(model, lr_batch, hr, forward, cfg, optimizer, step, lr);
    if (step % cfg.val_every == 0 || step == cfg.steps)
      std::tie(row.val_psnr, row.val_ssim) = validation_scores(val_f, data.val, model.scale());
    log.push_back(row);
    if (hooks.on_row) hooks.on_row(row);
    if (hooks.on_checkpoint && (step % cfg.checkpoint_every == 0 || step == cfg.steps)) hooks.on_checkpoint(step);
  }
  return log;
}

std::string AdrsrStage::label() const { return joint() ? "joint" : "level" + std::to_string(level); }

void AdrsrSchedule::validate(int levels) const {
  if (stages.empty()) throw ConfigError("adrsr schedule has no stages");
  int previous = levels;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    if (s.steps < 0) throw ConfigError("adrsr stage " + s.label() + " has negative steps");
    if (s.joint()) {
      if (i + 1 != stages.size()) throw ConfigError("adrsr schedule: the joint stage must be last and appear once");
      continue;
    }
    if (s.level < 0 || s.level >= levels)
      throw ConfigError("adrsr schedule: level " + std::to_string(s.level) + " out of range 0.." +
                        std::to_string(levels - 1));
    if (s.level >= previous) throw ConfigError("adrsr schedule: levels must be trained coarsest first");
    previous = s.level;
  }
  if (!stages.back().joint()) throw ConfigError("adrsr schedule must end with a joint stage");
}

std::int64_t AdrsrSchedule::total_steps() const {
  std::int64_t n = 0;
  for (const auto& s : stages) n += s.steps;
  return n;
}

AdrsrSchedule AdrsrSchedule::standard(int levels, std::int64_t steps_per_level, std::int64_t joint_steps) {
  AdrsrSchedule s;
  for (int k = levels - 1; k >= 0; --k) s.stages.push_back({k, steps_per_level, {}});
  s.stages.push_back({AdrsrStage::kJoint, joint_steps, {}});
  return s;
}

AdrsrSchedule AdrsrSchedule::parse(const std::string& text) {
  AdrsrSchedule s;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string kind;
    if (!(fields >> kind)) continue;
    auto fail = [&](const std::string& why) {
      throw ConfigError("adrsr schedule line " + std::to_string(line_no) + ": " + why);
    };
    AdrsrStage stage;
    if (kind == "level") {
      if (!(fields >> stage.level)) fail("expected a level index");
    } else if (kind != "joint") {
      fail("expected 'level' or 'joint', got '" + kind + "'");
    }
    if (!(fields >> stage.steps)) fail("expected a step count");
    std::string prefixes;
    if (fields >> prefixes) {
      std::istringstream list(prefixes);
      for (std::string p; std::getline(list, p, ',');)
        if (!p.empty()) stage.prefixes.push_back(p);
    }
    if (std::string extra; fields >> extra) fail("unexpected '" + extra + "'");
    s.stages.push_back(stage);
  }
  return s;
}

AdrsrSchedule AdrsrSchedule::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFoundError("adrsr schedule not found: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::vector<std::string> default_stage_prefixes(int level, int levels) {
  std::vector<std::string> p{"level" + std::to_string(level) + "."};
  if (level < levels - 1) {
    p.push_back("up" + std::to_string(level) + ".");
    p.push_back("fuse" + std::to_string(level) + ".");
  }
  return p;
}

std::uint64_t frozen_parameter_hash(const Model& model) { return fnv_frozen(model); }

std::vector<MetricsRow> train_adrsr(AdrsrModel& model, const TrainData& data, const AdrsrSchedule& schedule,
                                    const TrainConfig& cfg, Adam& optimizer, const TrainHooks& hooks,
                                    std::vector<StageReport>* reports) {
  cfg.validate();
  schedule.validate(model.levels());
  for (const auto& stage : schedule.stages)
    for (const auto& prefix : stage.prefixes) {
      bool hit = false;
      for (const auto& p : model.parameters()) hit = hit || p.name.rfind(prefix, 0) == 0;
      if (!hit) throw ConfigError("adrsr stage " + stage.label() + ": prefix '" + prefix + "' matches no parameters");
    }

  const std::int64_t start = optimizer.steps_taken();
  const std::int64_t total = schedule.total_steps();
  PatchSampler sampler(&data.train, patch_config_for(model, data, derive_seed(cfg.seed, static_cast<std::uint64_t>(start))));
  std::vector<MetricsRow> log;
  std::int64_t step = 0;
  for (const auto& stage : schedule.stages) {
    const int level = stage.joint() ? 0 : stage.level;
    const auto prefixes = stage.prefixes.empty() && !stage.joint() ? default_stage_prefixes(level, model.levels())
                                                                    : stage.prefixes;
    StageReport report;
    report.label = stage.label();
    report.trainable_tensors = model.set_trainable_prefixes(prefixes);
    report.frozen_hash_before = frozen_parameter_hash(model);
    auto forward = [&model, level](const Tensor& x) { return model.forward_from(x, level); };
    const Upscaler val_f = shifted(model, forward);
    for (std::int64_t i = 0; i < stage.steps; ++i) {
      ++step;
      if (step <= start) continue;
      const double lr = halved_lr(cfg.lr, step - 1, cfg.lr_halve_every);
      auto [hr, lr_batch] = sampler.next_batch(cfg.batch);
      if (level > 0) hr = bicubic_resample(hr, Ratio{1, 1 << level});
      MetricsRow row;
      row.step = step;
      row.lr = lr;
      row.stage = report.label;
      row.loss = run_step(model, lr_batch, hr, forward, cfg, optimizer, step, lr);
      if (step % cfg.val_every == 0 || i + 1 == stage.steps)
        std::tie(row.val_psnr, row.val_ssim) = validation_scores(val_f, data.val, model.scale(), level);
      log.push_back(row);
      if (hooks.on_row) hooks.on_row(row);
      if (hooks.on_checkpoint && (step % cfg.checkpoint_every == 0 || step == total)) hooks.on_checkpoint(step);
    }
    report.frozen_hash_after = frozen_parameter_hash(model);
    if (reports) reports->push_back(report);
  }
  model.set_trainable_prefixes({});
  return log;
}

double blocky_artifact_energy(const Tensor& pred, const Tensor& target, int period) {
  if (pred.shape() != target.shape()) throw ShapeError("blocky_artifact_energy: shape mismatch");
  if (period < 1) throw ConfigError("blocky_artifact_energy: period must be positive");
  NoGradGuard no_grad;
  const Tensor e = ops::sobel(ops::sub(pred.to(DType::f64), target.to(DType::f64)));
  const auto v = e.data<double>();
  const std::int64_t planes = e.dim(0) * e.dim(1), h = e.dim(2), w = e.dim(3);
  double sum = 0.0;
  std::int64_t n = 0;
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t y = 1; y + 1 < h; ++y)
      for (std::int64_t x = 1; x + 1 < w; ++x)
        if (y % period == 0 || x % period == 0) {
          sum += v[static_cast<std::size_t>((p * h + y) * w + x)];
          ++n;
        }
  if (n == 0) throw ShapeError("blocky_artifact_energy: no interior grid pixels");
  return sum / static_cast<double>(n);
}

}  // namespace srlab
