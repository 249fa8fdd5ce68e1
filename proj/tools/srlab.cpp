#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "srlab/checkpoint.hpp"
#include "srlab/config.hpp"
#include "srlab/data.hpp"
#include "srlab/inference.hpp"
#include "srlab/runtime.hpp"
#include "srlab/train.hpp"

namespace fs = std::filesystem;
using namespace srlab;

namespace {

fs::path sibling(const fs::path& out, const std::string& suffix) {
  fs::path p = out;
  p.replace_extension();
  return p.string() + suffix;
}

std::vector<ImageBuffer> load_hr_dir(const fs::path& dir, std::vector<std::string>& stems) {
  if (!fs::is_directory(dir)) throw FileNotFoundError("directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().extension() == ".png") files.push_back(entry.path());
    else std::cerr << "warning: skipping non-PNG file " << entry.path().string() << "\n";
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no PNG files in " + dir.string());
  std::vector<ImageBuffer> images;
  for (const auto& f : files) {
    images.push_back(load_image(f));
    stems.push_back(f.stem().string());
  }
  return images;
}

struct MakeDatasetArgs {
  std::string hr, out;
  int scale = 2;
  double blur = 0.0, noise = 0.0;
  std::uint64_t seed = 0;
};

int make_dataset_cmd(const MakeDatasetArgs& a) {
  DegradationSpec spec;
  spec.scale = a.scale;
  spec.blur_sigma = a.blur;
  spec.noise_sigma = a.noise;
  spec.seed = a.seed;
  spec.validate();
  std::vector<std::string> stems;
  const auto hr = load_hr_dir(a.hr, stems);
  const auto pairs = make_dataset(hr, stems, a.out, spec);
  std::cout << "wrote " << pairs.size() << " pairs to " << a.out << "\n";
  return 0;
}

struct SynthArgs {
  std::string out;
  int count = 16, width = 128, height = 128;
  std::uint64_t seed = 0;
};

int synth_cmd(const SynthArgs& a) {
  if (a.count <= 0 || a.width <= 0 || a.height <= 0) throw ConfigError("count and size must be positive");
  fs::create_directories(a.out);
  for (int i = 0; i < a.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%04d.png", i);
    save_image(synth_image(a.width, a.height, derive_seed(a.seed, static_cast<std::uint64_t>(i))), fs::path(a.out) / name);
  }
  std::cout << "wrote " << a.count << " images to " << a.out << "\n";
  return 0;
}

struct NoiseArgs {
  std::string hr, lr, out;
  int scale = 2;
  double threshold = kDefaultFlatThreshold;
};

int estimate_noise_cmd(const NoiseArgs& a) {
  const auto pairs = load_eval_pairs(a.hr, a.lr, a.scale);
  const auto report = estimate_noise(pairs, a.scale, a.threshold);
  write_noise_csv(report, a.out);
  std::printf("pooled_std=%.6f mean=%.6f flat_regions=%zu\n", report.pooled_std, report.mean, report.region_std.size());
  return 0;
}

struct TrainArgs {
  std::string config, data, out, resume, schedule;
  std::vector<std::string> overrides;
};

template <typename T>
std::unique_ptr<T> load_donor(const std::string& path, ModelKind expected) {
  auto m = load_checkpoint(path);
  if (m->kind() != expected)
    throw ConfigError("donor " + path + " is a " + to_string(m->kind()) + " model, expected " + to_string(expected));
  return std::unique_ptr<T>(static_cast<T*>(m.release()));
}

std::unique_ptr<Model> build_from_config(const RunConfig& cfg) {
  const auto spec = cfg.composite();
  const auto kind = spec.kind;
  const bool donors = !cfg.denoiser_checkpoint().empty() || !cfg.sr_checkpoint().empty();
  std::unique_ptr<Model> model;
  if (donors && (kind == ModelKind::dnisr || kind == ModelKind::dnsr)) {
    if (cfg.denoiser_checkpoint().empty() || cfg.sr_checkpoint().empty())
      throw ConfigError("composite models need both model.denoiser_ckpt and model.sr_ckpt, or neither");
    const auto den = load_donor<DenoiserModel>(cfg.denoiser_checkpoint(), ModelKind::denoiser);
    const auto sr = load_donor<BaselineModel>(cfg.sr_checkpoint(), ModelKind::baseline);
    if (kind == ModelKind::dnisr) {
      auto m = build_dnisr(*den, *sr);
      const auto check = check_dnisr_init(*den, *sr, *m, 3, 1);
      std::printf("dnisr init check: max rel diff %.3g (tolerance 1e-6)\n", check.full);
      if (!(check.full <= 1e-6)) throw NumericalError("dnisr init check failed");
      model = std::move(m);
    } else {
      auto m = build_dnsr(*den, *sr, spec.bridge_kernel);
      const auto check = check_dnsr_init(*den, *sr, *m, 3, 1);
      std::printf("dnsr init check: interior max rel diff %.3g (tolerance 1e-4, margin %d px), whole image %.3g\n",
                  check.interior, check.margin, check.full);
      if (!(check.interior <= 1e-4)) throw NumericalError("dnsr init check failed");
      model = std::move(m);
    }
  } else if (donors) {
    throw ConfigError("donor checkpoints only apply to dnisr and dnsr models");
  } else {
    model = build_model(spec, cfg.build_options());
  }
  if (model->dtype() != cfg.build_options().dtype) throw ConfigError("donor dtype differs from model.dtype");
  return model;
}

int train_cmd(const TrainArgs& a) {
  RunConfig cfg = a.config.empty() ? RunConfig() : RunConfig::load(a.config);
  for (const auto& o : a.overrides) cfg.apply_override(o);
  const TrainConfig tc = cfg.train();
  const DegradationSpec deg = cfg.degradation();
  TrainData data;
  data.patch = cfg.patch();

  Adam adam(AdamConfig{tc.lr});
  std::unique_ptr<Model> model = a.resume.empty() ? build_from_config(cfg) : load_checkpoint(a.resume, &adam);
  model->per_image_mean_shift = cfg.per_image_mean_shift();
  if (!a.resume.empty())
    std::printf("resuming %s model from step %lld\n", to_string(model->kind()).c_str(),
                static_cast<long long>(adam.steps_taken()));

  auto pairs = load_pairs(a.data, deg.scale);
  std::vector<ImagePair> val;
  if (!cfg.val_dir().empty()) {
    std::vector<std::string> only;
    if (!cfg.val_list().empty()) only = read_val_list(cfg.val_list());
    const fs::path root = cfg.val_dir();
    val = load_eval_pairs(root / "HR", root / ("LRx" + std::to_string(deg.scale)), deg.scale,
                          cfg.val_list().empty() ? nullptr : &only);
  }
  if (model->kind() == ModelKind::denoiser) {
    data.train = denoising_pairs(pairs, deg);
    data.val = val.empty() ? val : denoising_pairs(val, deg);
    data.patch.scale = 1;
  } else {
    if (model->scale() != deg.scale)
      throw ConfigError("model.scale " + std::to_string(model->scale()) + " does not match data.scale " +
                        std::to_string(deg.scale));
    data.train = std::move(pairs);
    data.val = std::move(val);
  }

  const fs::path out = a.out;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  cfg.write(sibling(out, ".config.ini"));
  std::vector<MetricsRow> log;
  TrainHooks hooks;
  hooks.on_row = [&](const MetricsRow& r) {
    log.push_back(r);
    if (!std::isnan(r.val_psnr))
      std::printf("step %lld%s%s loss %.4f val_psnr %.4f val_ssim %.4f lr %.3g\n", static_cast<long long>(r.step),
                  r.stage.empty() ? "" : " ", r.stage.c_str(), r.loss, r.val_psnr, r.val_ssim, r.lr);
  };
  hooks.on_checkpoint = [&](std::int64_t) {
    save_checkpoint(*model, out, &adam);
    write_metrics_csv(sibling(out, ".metrics.csv"), log);
  };
  if (model->kind() == ModelKind::adrsr) {
    auto& adrsr = static_cast<AdrsrModel&>(*model);
    const auto schedule = a.schedule.empty()
                              ? AdrsrSchedule::standard(adrsr.levels(), cfg.adrsr_level_steps(), cfg.adrsr_joint_steps())
                              : AdrsrSchedule::load(a.schedule);
    train_adrsr(adrsr, data, schedule, tc, adam, hooks);
  } else {
    if (!a.schedule.empty()) throw ConfigError("--adrsr-schedule needs an adrsr model");
    train(*model, data, tc, adam, hooks);
  }
  save_checkpoint(*model, out, &adam);
  write_metrics_csv(sibling(out, ".metrics.csv"), log);
  std::printf("saved %s after %lld steps\n", out.string().c_str(), static_cast<long long>(adam.steps_taken()));
  return 0;
}

struct UpscaleArgs {
  std::string model, in, out;
  bool ensemble = false, rgb = false;
};

int upscale_cmd(const UpscaleArgs& a) {
  const auto model = load_checkpoint(a.model);
  const ImageBuffer lr = load_image(a.in);
  const bool ensemble = a.ensemble || a.rgb;
  const ImageBuffer sr = ensemble ? self_ensemble_predict(*model, lr, a.rgb) : upscale(*model, lr);
  save_image(sr, a.out);
  std::printf("wrote %s (%dx%d)\n", a.out.c_str(), sr.width, sr.height);
  return 0;
}

struct EvalArgs {
  std::string model, model_b, hr, lr, val_list, out;
  bool ensemble = false, rgb = false, luma = false;
  int crop = -1;
};

int eval_cmd(const EvalArgs& a) {
  const auto model = load_checkpoint(a.model);
  std::unique_ptr<Model> other;
  if (!a.model_b.empty()) {
    other = load_checkpoint(a.model_b);
    if (other->scale() != model->scale()) throw ConfigError("--model and --model-b have different scales");
  }
  std::vector<std::string> only;
  if (!a.val_list.empty()) only = read_val_list(a.val_list);
  const auto pairs = load_eval_pairs(a.hr, a.lr, model->scale(), a.val_list.empty() ? nullptr : &only);
  EvalOptions opt;
  opt.crop_border = a.crop;
  opt.luma_only = a.luma;
  opt.self_ensemble = a.ensemble;
  opt.rgb_shuffle = a.rgb;
  const Upscaler fa = model_upscaler(*model);
  Upscaler fb;
  if (other) fb = model_upscaler(*other);
  const auto report = evaluate(fa, pairs, model->scale(), opt, other ? &fb : nullptr);
  report.write_csv(a.out, other != nullptr);
  std::printf("images %zu mean_psnr %.4f mean_ssim %.4f\n", report.rows.size(), report.psnr.mean, report.ssim.mean);
  if (other)
    std::printf("mean_delta %.4f improved %zu/%zu\n", report.delta.mean, report.improved, report.rows.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Super-resolution lab: dataset synthesis, noise estimation, training, upscaling, evaluation"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Cap on worker threads (default: SRLAB_THREADS or hardware count)")
      ->check(CLI::PositiveNumber);

  MakeDatasetArgs md;
  auto* c_md = app.add_subcommand("make-dataset", "Degrade HR PNGs into an HR/LRx{s} dataset");
  c_md->add_option("--hr", md.hr, "Directory of HR PNGs")->required();
  c_md->add_option("--scale", md.scale, "Downscale factor (2, 4 or 8)")->required();
  c_md->add_option("--blur-sigma", md.blur, "Gaussian blur before downscaling");
  c_md->add_option("--noise-sigma", md.noise, "Additive Gaussian noise on the LR image");
  c_md->add_option("--seed", md.seed, "Noise seed");
  c_md->add_option("--out", md.out, "Output dataset root")->required();

  SynthArgs sy;
  auto* c_sy = app.add_subcommand("synth-hr", "Write procedural HR test images");
  c_sy->add_option("--out", sy.out, "Output directory")->required();
  c_sy->add_option("--count", sy.count, "Number of images");
  c_sy->add_option("--width", sy.width, "Image width");
  c_sy->add_option("--height", sy.height, "Image height");
  c_sy->add_option("--seed", sy.seed, "Seed");

  NoiseArgs ne;
  auto* c_ne = app.add_subcommand("estimate-noise", "Measure LR noise over flat regions");
  c_ne->add_option("--hr", ne.hr, "HR directory")->required();
  c_ne->add_option("--lr", ne.lr, "LR directory")->required();
  c_ne->add_option("--scale", ne.scale, "Scale factor")->required();
  c_ne->add_option("--flat-threshold", ne.threshold, "Max per-channel variance of a flat 8x8 window");
  c_ne->add_option("--out", ne.out, "Histogram CSV")->required();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train a model");
  c_tr->add_option("--config", tr.config, "Run config file");
  c_tr->add_option("--data", tr.data, "Dataset root with HR and LRx{s}")->required();
  c_tr->add_option("--out", tr.out, "Output checkpoint")->required();
  c_tr->add_option("--resume", tr.resume, "Continue from a checkpoint with optimizer state");
  c_tr->add_option("--adrsr-schedule", tr.schedule, "Stage file for adrsr models");
  c_tr->add_option("--set", tr.overrides, "Override a config value: section.key=value");

  UpscaleArgs up;
  auto* c_up = app.add_subcommand("upscale", "Upscale one PNG");
  c_up->add_option("--model", up.model, "Checkpoint")->required();
  c_up->add_option("--in", up.in, "Input PNG")->required();
  c_up->add_option("--out", up.out, "Output PNG")->required();
  c_up->add_flag("--self-ensemble", up.ensemble, "Average over flips and rotations");
  c_up->add_flag("--rgb-shuffle", up.rgb, "Also average over channel permutations");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Per-image PSNR/SSIM report");
  c_ev->add_option("--model", ev.model, "Checkpoint")->required();
  c_ev->add_option("--model-b", ev.model_b, "Second checkpoint for a paired, sorted delta report");
  c_ev->add_option("--hr", ev.hr, "HR directory")->required();
  c_ev->add_option("--lr", ev.lr, "LR directory")->required();
  c_ev->add_option("--val-list", ev.val_list, "File listing the images to use");
  c_ev->add_flag("--self-ensemble", ev.ensemble, "Average over flips and rotations");
  c_ev->add_flag("--rgb-shuffle", ev.rgb, "Also average over channel permutations");
  c_ev->add_flag("--luma", ev.luma, "Score the luma channel only");
  c_ev->add_option("--crop-border", ev.crop, "Border pixels ignored by the metrics (default: scale)");
  c_ev->add_option("--out", ev.out, "Report CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    configure_runtime(resolve_thread_count(threads));
    if (c_md->parsed()) return make_dataset_cmd(md);
    if (c_sy->parsed()) return synth_cmd(sy);
    if (c_ne->parsed()) return estimate_noise_cmd(ne);
    if (c_tr->parsed()) return train_cmd(tr);
    if (c_up->parsed()) return upscale_cmd(up);
    if (c_ev->parsed()) return eval_cmd(ev);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::config);
  }
  return 1;
}
