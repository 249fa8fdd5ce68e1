#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "srlab/ops.hpp"
#include "srlab/resample.hpp"
#include "srlab/train.hpp"
#include "support/oracles.hpp"

using namespace srlab;
namespace fs = std::filesystem;

namespace {

std::vector<ImagePair> toy_pairs(int count, int side, int scale, std::uint64_t seed, double noise = 0.0) {
  std::vector<ImageBuffer> hr;
  for (int i = 0; i < count; ++i) hr.push_back(synth_image(side, side, seed + static_cast<std::uint64_t>(i)));
  DegradationSpec d;
  d.scale = scale;
  d.noise_sigma = noise;
  d.seed = seed;
  return degrade_all(hr, d);
}

BaselineSRSpec tiny_sr(int scale = 2) {
  BaselineSRSpec s;
  s.n_feats = 8;
  s.n_blocks = 2;
  s.scale = scale;
  return s;
}

DenoiserSpec tiny_den() {
  DenoiserSpec d;
  d.depth = 4;
  d.n_feats = 8;
  return d;
}

TrainConfig quick(std::int64_t steps) {
  TrainConfig c;
  c.steps = steps;
  c.batch = 4;
  c.lr = 1e-3;
  c.val_every = 5;
  c.seed = 3;
  return c;
}

TrainData toy_data(int scale = 2, int patch = 16) {
  TrainData d;
  d.train = toy_pairs(3, 64, scale, 100);
  d.val = toy_pairs(2, 64, scale, 200);
  d.patch.lr_patch = patch;
  d.patch.scale = scale;
  return d;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("srlab_train_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Loss, IdenticalIsZero) {
  std::mt19937_64 rng(1);
  const Tensor a = srlab::testing::random_tensor({2, 3, 7, 9}, rng);
  EXPECT_EQ(l1_loss(a, a).item(), 0.0);
  EXPECT_EQ(edge_loss(a, a, 0.5).item(), 0.0);
}

TEST(Loss, ConstantOffset) {
  std::mt19937_64 rng(2);
  const Tensor a = srlab::testing::random_tensor({1, 3, 8, 8}, rng);
  const Tensor b = ops::add(a, Tensor::full(a.shape(), 2.0, DType::f64));
  EXPECT_NEAR(l1_loss(b, a).item(), 2.0, 1e-12);
}

TEST(Loss, MatchesDirectSummation) {
  std::mt19937_64 rng(3);
  const Tensor p = srlab::testing::random_tensor({2, 3, 9, 11}, rng, DType::f64, 0.0, 255.0);
  const Tensor t = srlab::testing::random_tensor({2, 3, 9, 11}, rng, DType::f64, 0.0, 255.0);
  const auto pv = p.to_doubles(), tv = t.to_doubles();
  double l1 = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) l1 += std::abs(pv[i] - tv[i]);
  l1 /= static_cast<double>(pv.size());
  EXPECT_NEAR(l1_loss(p, t).item(), l1, 1e-12);

  const auto sp = srlab::testing::reference_sobel(p), st = srlab::testing::reference_sobel(t);
  double edge = 0.0;
  for (std::size_t i = 0; i < sp.size(); ++i) edge += std::abs(sp[i] - st[i]);
  edge /= static_cast<double>(sp.size());
  EXPECT_NEAR(edge_loss(p, t, 0.25).item(), l1 + 0.25 * edge, 1e-12);
  TrainConfig cfg;
  cfg.loss = LossKind::l1_plus_edge;
  cfg.edge_weight = 0.25;
  EXPECT_NEAR(training_loss(p, t, cfg).item(), l1 + 0.25 * edge, 1e-12);
}

TEST(Loss, ShapeMismatch) {
  EXPECT_THROW(l1_loss(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({1, 3, 4, 5})), ShapeError);
  EXPECT_THROW(parse_loss_kind("l2"), ConfigError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lr = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.edge_weight = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.steps = 0;
  EXPECT_NO_THROW(c.validate());
}

TEST(Train, ZeroStepsLeavesModelUntouched) {
  auto model = build_baseline(tiny_sr(), {1});
  const auto before = parameter_hash(*model);
  Adam adam;
  const auto log = train(*model, toy_data(), quick(0), adam);
  EXPECT_TRUE(log.empty());
  EXPECT_EQ(parameter_hash(*model), before);
}

TEST(Train, DeterministicPerSeed) {
  auto run = [] {
    auto model = build_baseline(tiny_sr(), {4});
    Adam adam(AdamConfig{1e-3});
    auto log = train(*model, toy_data(), quick(12), adam);
    return std::make_pair(log, parameter_hash(*model));
  };
  const auto [a, ha] = run();
  const auto [b, hb] = run();
  ASSERT_EQ(a.size(), 12u);
  EXPECT_EQ(ha, hb);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].loss, b[i].loss);
    EXPECT_EQ(std::isnan(a[i].val_psnr), std::isnan(b[i].val_psnr));
    if (!std::isnan(a[i].val_psnr)) EXPECT_EQ(a[i].val_psnr, b[i].val_psnr);
  }
  // Validation on every val_every-th step and on the last one.
  EXPECT_FALSE(std::isnan(a[4].val_psnr));
  EXPECT_TRUE(std::isnan(a[5].val_psnr));
  EXPECT_FALSE(std::isnan(a[11].val_psnr));
}

TEST(Train, ResumeContinuesStepsAndSchedule) {
  auto model = build_baseline(tiny_sr(), {5});
  Adam adam;
  auto cfg = quick(6);
  cfg.lr_halve_every = 4;
  const auto first = train(*model, toy_data(), cfg, adam);
  EXPECT_EQ(first.back().step, 6);
  cfg.steps = 10;
  const auto second = train(*model, toy_data(), cfg, adam);
  ASSERT_EQ(second.size(), 4u);
  EXPECT_EQ(second.front().step, 7);
  EXPECT_DOUBLE_EQ(second.front().lr, 0.5e-3);
  EXPECT_DOUBLE_EQ(second.back().lr, 0.25e-3);
  EXPECT_EQ(adam.steps_taken(), 10);
}

TEST(Train, NonFiniteLossAborts) {
  auto model = build_baseline(tiny_sr(), {6});
  auto& bias = model->parameter("tail.bias").value;
  bias.copy_from(Tensor::full(bias.shape(), std::nan(""), bias.dtype()));
  Adam adam;
  try {
    train(*model, toy_data(), quick(5), adam);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("lr 0.001"), std::string::npos) << e.what();
    EXPECT_EQ(e.exit_code(), 3);
  }
}

TEST(Train, ScaleMismatchRejected) {
  auto model = build_baseline(tiny_sr(4), {7});
  Adam adam;
  EXPECT_THROW(train(*model, toy_data(2), quick(1), adam), ConfigError);
}

TEST(Train, CheckpointHook) {
  auto model = build_baseline(tiny_sr(), {8});
  Adam adam;
  auto cfg = quick(7);
  cfg.checkpoint_every = 3;
  std::vector<std::int64_t> calls;
  train(*model, toy_data(), cfg, adam, {{}, [&](std::int64_t s) { calls.push_back(s); }});
  EXPECT_EQ(calls, (std::vector<std::int64_t>{3, 6, 7}));
}

TEST(Train, MetricsCsvLayout) {
  std::vector<MetricsRow> rows(2);
  rows[0] = {1, 0.5, std::nan(""), std::nan(""), 1e-4, ""};
  rows[1] = {2, 0.25, 30.5, 0.9, 1e-4, ""};
  const auto path = scratch("metrics.csv");
  write_metrics_csv(path, rows);
  std::ifstream in(path);
  std::string l0, l1, l2;
  std::getline(in, l0);
  std::getline(in, l1);
  std::getline(in, l2);
  EXPECT_EQ(l0, "step,loss,val_psnr,val_ssim,lr");
  EXPECT_EQ(l1, "1,0.5,,,0.0001");
  EXPECT_EQ(l2.substr(0, 12), "2,0.25,30.5,");
}

// Every model kind must be able to fit a single image.
TEST(Train, SingleImageOverfitForEveryKind) {
  const auto pairs = toy_pairs(1, 64, 2, 300, 5.0);
  DegradationSpec deg;
  deg.scale = 2;
  std::vector<std::pair<std::string, std::unique_ptr<Model>>> models;
  models.emplace_back("baseline", build_baseline(tiny_sr(), {9}));
  models.emplace_back("denoiser", build_denoiser(tiny_den(), {10}));
  models.emplace_back("dnisr", build_dnisr(*build_denoiser(tiny_den(), {11}), *build_baseline(tiny_sr(), {12})));
  models.emplace_back("dnsr", build_dnsr(*build_denoiser(tiny_den(), {13}), *build_baseline(tiny_sr(), {14})));
  models.emplace_back("adrsr", build_adrsr(tiny_sr(), 2, 3, {15}));
  for (auto& [name, model] : models) {
    TrainData data;
    data.train = name == "denoiser" ? denoising_pairs(pairs, deg) : pairs;
    data.patch.lr_patch = 16;
    data.patch.scale = model->scale();
    auto cfg = quick(500);
    cfg.val_every = 1000;
    Adam adam;
    const auto log = train(*model, data, cfg, adam);
    EXPECT_LT(log.back().loss, log.front().loss) << name;
  }
}

TEST(AdrsrSchedule, ParseAndValidate) {
  const auto s = AdrsrSchedule::parse("# staged\nlevel 2 30\nlevel 1 20 level1.,fuse1.\nlevel 0 10\njoint 5\n");
  ASSERT_EQ(s.stages.size(), 4u);
  EXPECT_EQ(s.stages[1].prefixes, (std::vector<std::string>{"level1.", "fuse1."}));
  EXPECT_TRUE(s.stages[3].joint());
  EXPECT_EQ(s.total_steps(), 65);
  EXPECT_NO_THROW(s.validate(3));
  EXPECT_THROW(s.validate(2), ConfigError);
  EXPECT_THROW(AdrsrSchedule::parse("level 0 10\nlevel 1 10\njoint 1").validate(2), ConfigError);
  EXPECT_THROW(AdrsrSchedule::parse("level 1 10\nlevel 0 10").validate(2), ConfigError);
  EXPECT_THROW(AdrsrSchedule::parse("joint 1\nlevel 0 10\njoint 1").validate(2), ConfigError);
  EXPECT_THROW(AdrsrSchedule::parse("stage 1 10"), ConfigError);
  EXPECT_THROW(AdrsrSchedule::parse("level 1"), ConfigError);
  EXPECT_EQ(AdrsrSchedule::standard(3, 7, 9).stages.size(), 4u);
  EXPECT_EQ(default_stage_prefixes(0, 2), (std::vector<std::string>{"level0.", "up0.", "fuse0."}));
  EXPECT_EQ(default_stage_prefixes(1, 2), (std::vector<std::string>{"level1."}));
}

TEST(TrainAdrsr, FrozenParametersBitIdenticalPerStage) {
  for (int levels : {2, 3}) {
    auto model = build_adrsr(tiny_sr(), levels, 3, {20});
    const auto data = toy_data(2, 32);
    auto cfg = quick(0);
    cfg.val_every = 1000;
    Adam adam;
    std::vector<StageReport> reports;
    const auto level0_before = parameter_hash(*model, "level0.");
    std::uint64_t level0_during_coarse = 0;
    TrainHooks hooks;
    hooks.on_row = [&](const MetricsRow& r) {
      if (r.stage == "level" + std::to_string(levels - 1)) level0_during_coarse = parameter_hash(*model, "level0.");
    };
    const auto log = train_adrsr(*model, data, AdrsrSchedule::standard(levels, 3, 3), cfg, adam, hooks, &reports);
    ASSERT_EQ(reports.size(), static_cast<std::size_t>(levels + 1));
    EXPECT_EQ(log.size(), static_cast<std::size_t>(3 * (levels + 1)));
    for (const auto& r : reports) {
      EXPECT_EQ(r.frozen_hash_before, r.frozen_hash_after) << r.label;
      EXPECT_GT(r.trainable_tensors, 0u);
    }
    EXPECT_EQ(level0_during_coarse, level0_before);
    EXPECT_NE(parameter_hash(*model, "level0."), level0_before);
    for (const auto& p : model->parameters()) EXPECT_TRUE(p.trainable);
  }
}

TEST(TrainAdrsr, StageTargetShapes) {
  for (int levels : {2, 3}) {
    auto model = build_adrsr(tiny_sr(), levels, 3, {21});
    std::mt19937_64 rng(22);
    const Tensor lr = srlab::testing::random_tensor({2, 3, 32, 32}, rng, DType::f32, 0, 255);
    const Tensor hr = srlab::testing::random_tensor({2, 3, 64, 64}, rng, DType::f32, 0, 255);
    for (int k = 0; k < levels; ++k) {
      const Tensor target = k == 0 ? hr : bicubic_resample(hr, Ratio{1, 1 << k});
      const std::int64_t side = 64 >> k;
      EXPECT_EQ(target.shape(), (Shape{2, 3, side, side}));
      EXPECT_EQ(model->forward_from(lr, k).shape(), target.shape());
    }
  }
}

TEST(TrainAdrsr, PrefixMatchingNothingRejected) {
  auto model = build_adrsr(tiny_sr(), 2, 3, {23});
  Adam adam;
  const auto s = AdrsrSchedule::parse("level 1 1 level9.\njoint 1");
  EXPECT_THROW(train_adrsr(*model, toy_data(2, 32), s, quick(0), adam), ConfigError);
}

TEST(BlockyArtifacts, GridPatternScoresHigherThanSmoothError) {
  std::vector<double> grid(64 * 64), smooth(64 * 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      grid[static_cast<std::size_t>(y * 64 + x)] = ((x / 4) + (y / 4)) % 2 ? 8.0 : 0.0;
      smooth[static_cast<std::size_t>(y * 64 + x)] = 0.1 * x + 0.05 * y;
    }
  auto planes = [](std::vector<double> v) {
    std::vector<double> all;
    for (int c = 0; c < 3; ++c) all.insert(all.end(), v.begin(), v.end());
    return Tensor::from_vector({1, 3, 64, 64}, all);
  };
  const Tensor zero = Tensor::zeros({1, 3, 64, 64}, DType::f64);
  EXPECT_GT(blocky_artifact_energy(planes(grid), zero, 4), 10 * blocky_artifact_energy(planes(smooth), zero, 4));
  EXPECT_EQ(blocky_artifact_energy(zero, zero, 4), 0.0);
}

// Staged training leaves seams where coarse levels are lifted; the joint
// stage must reduce them.
TEST(TrainAdrsr, JointStageReducesBlockyArtifacts) {
  auto model = build_adrsr(tiny_sr(), 2, 3, {24});
  TrainData data = toy_data(2, 32);
  data.train = toy_pairs(8, 96, 2, 400);
  auto cfg = quick(0);
  cfg.batch = 8;
  cfg.val_every = 100000;
  auto proxy = [&] {
    double e = 0.0;
    for (const auto& p : data.val) {
      const Tensor sr = predict(*model, to_tensor(p.lr));
      e += blocky_artifact_energy(sr, to_tensor(p.hr), 2);
    }
    return e / static_cast<double>(data.val.size());
  };
  Adam adam;
  train_adrsr(*model, data, AdrsrSchedule::parse("level 1 300\nlevel 0 300\njoint 0"), cfg, adam);
  const double staged = proxy();
  Adam fine_tune;
  train_adrsr(*model, data, AdrsrSchedule::parse("joint 300"), cfg, fine_tune);
  const double joint = proxy();
  EXPECT_LT(joint, staged);
}

TEST(SelfEnsemble, EquivariantModelIsAFixedPoint) {
  std::mt19937_64 rng(30);
  const Tensor lr = srlab::testing::random_tensor({1, 3, 12, 17}, rng, DType::f32, 0, 255);
  const auto f = bicubic_upscaler(2);
  const Tensor single = f(lr);
  for (bool rgb : {false, true}) {
    const Tensor ens = self_ensemble(f, lr, rgb);
    EXPECT_EQ(ens.shape(), single.shape());
    EXPECT_LE(srlab::testing::max_abs_diff(ens, single), 1e-4) << rgb;
  }
}

TEST(SelfEnsemble, ChannelPermutationInvariance) {
  auto model = build_baseline(tiny_sr(), {31});
  std::mt19937_64 rng(32);
  const Tensor lr = srlab::testing::random_tensor({1, 3, 10, 13}, rng, DType::f32, 0, 255);
  const auto f = model_upscaler(*model);
  const Tensor base = self_ensemble(f, lr, true);
  for (const auto& perm : channel_permutations()) {
    Transform t;
    t.perm = perm;
    const Tensor out = apply(inverse(t), self_ensemble(f, apply(t, lr), true));
    EXPECT_LE(srlab::testing::max_abs_diff(out, base), 1e-4);
  }
  const auto img = to_image(lr);
  EXPECT_EQ(self_ensemble_predict(*model, img, false).width, 26);
  EXPECT_EQ(self_ensemble_predict(*model, img, true).height, 20);
}

TEST(SelfEnsemble, MeanShiftIsApplied) {
  auto model = build_baseline(tiny_sr(), {33});
  for (auto& p : model->parameters()) p.value.copy_from(Tensor::zeros(p.value.shape(), p.value.dtype()));
  const ImageBuffer img = to_image(Tensor::full({1, 3, 6, 6}, 77.0));
  const ImageBuffer out = upscale(*model, img);
  for (auto v : out.pixels) EXPECT_EQ(v, 77);
  model->per_image_mean_shift = false;
  for (auto v : upscale(*model, img).pixels) EXPECT_EQ(v, 0);
}

TEST(Evaluate, RowsAndAggregates) {
  const auto pairs = toy_pairs(5, 48, 2, 500);
  const auto bicubic = bicubic_upscaler(2);
  const auto report = evaluate(bicubic, pairs, 2, {}, &bicubic);
  ASSERT_EQ(report.rows.size(), 5u);
  double sum = 0.0, sum_ssim = 0.0;
  for (const auto& r : report.rows) {
    sum += r.psnr;
    sum_ssim += r.ssim;
    EXPECT_EQ(r.delta, 0.0);
  }
  EXPECT_NEAR(report.psnr.mean, sum / 5, 1e-12);
  EXPECT_NEAR(report.ssim.mean, sum_ssim / 5, 1e-12);
  EXPECT_EQ(report.improved, 0u);
  EXPECT_EQ(report.delta.max, 0.0);
  EXPECT_EQ(report.delta.min, 0.0);
  EXPECT_EQ(report.rows[0].image, "0000");
  EXPECT_THROW(evaluate(bicubic, {}, 2), DataError);
}

TEST(Evaluate, SortedPairedCsv) {
  const auto pairs = toy_pairs(4, 48, 2, 600);
  auto model = build_baseline(tiny_sr(), {34});
  const auto a = model_upscaler(*model);
  const auto b = bicubic_upscaler(2);
  const auto report = evaluate(a, pairs, 2, {}, &b);
  const auto sorted = report.sorted_by_delta();
  for (std::size_t i = 1; i < sorted.size(); ++i) EXPECT_LE(sorted[i - 1].delta, sorted[i].delta);
  const auto path = scratch("eval.csv");
  report.write_csv(path, true);
  std::ifstream in(path);
  std::string line, header;
  double mean_psnr = 0.0;
  int rows = 0;
  double sum = 0.0;
  while (std::getline(in, line)) {
    if (line.rfind("# mean_psnr=", 0) == 0) mean_psnr = std::stod(line.substr(12));
    if (line[0] == '#') continue;
    if (header.empty()) {
      header = line;
      continue;
    }
    ++rows;
    std::stringstream ss(line);
    std::string rank, image, psnr;
    std::getline(ss, rank, ',');
    std::getline(ss, image, ',');
    std::getline(ss, psnr, ',');
    EXPECT_EQ(std::stoi(rank), rows);
    sum += std::stod(psnr);
  }
  EXPECT_EQ(header, "rank,image,psnr,ssim,psnr_other,delta");
  EXPECT_EQ(rows, 4);
  EXPECT_NEAR(mean_psnr, sum / 4, 1e-9);
}

TEST(Evaluate, DirectoryPairingAndValList) {
  const auto root = scratch("evalset");
  fs::remove_all(root);
  std::vector<ImageBuffer> hr;
  for (int i = 0; i < 10; ++i) hr.push_back(synth_image(32, 32, 700 + static_cast<std::uint64_t>(i)));
  DegradationSpec d;
  d.scale = 2;
  std::vector<std::string> stems;
  for (int i = 0; i < 10; ++i) stems.push_back("img" + std::to_string(i));
  make_dataset(hr, stems, root, d);
  EXPECT_EQ(load_eval_pairs(root / "HR", root / "LRx2", 2).size(), 10u);

  const auto list = scratch("val.txt");
  std::ofstream(list) << "# pinned\nimg3.png\n\nimg7\n";
  const auto only = read_val_list(list);
  EXPECT_EQ(only, (std::vector<std::string>{"img3", "img7"}));
  const auto subset = load_eval_pairs(root / "HR", root / "LRx2", 2, &only);
  ASSERT_EQ(subset.size(), 2u);
  EXPECT_EQ(evaluate(bicubic_upscaler(2), subset, 2).rows.size(), 2u);

  const std::vector<std::string> bogus{"img3", "nope"};
  EXPECT_THROW(load_eval_pairs(root / "HR", root / "LRx2", 2, &bogus), DataError);
  fs::remove(root / "LRx2" / "img5.png");
  try {
    load_eval_pairs(root / "HR", root / "LRx2", 2);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("img5"), std::string::npos);
  }
  fs::create_directories(root / "empty_hr");
  fs::create_directories(root / "empty_lr");
  EXPECT_THROW(load_eval_pairs(root / "empty_hr", root / "empty_lr", 2), DataError);
  EXPECT_THROW(load_eval_pairs(root / "missing", root / "LRx2", 2), FileNotFoundError);
}
