#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "srlab/checkpoint.hpp"
#include "srlab/models.hpp"
#include "srlab/ops.hpp"
#include "support/oracles.hpp"

using namespace srlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("srlab_models_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

Tensor image_input(std::mt19937_64& rng, int h, int w, DType dtype = DType::f32) {
  return srlab::testing::random_tensor({1, 3, h, w}, rng, dtype, 0.0, 255.0);
}

// max |a - b| / max(1, max |b|)
double scaled_diff(const Tensor& a, const Tensor& b) {
  const auto x = a.to_doubles(), y = b.to_doubles();
  double worst = 0.0, peak = 1.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, std::abs(x[i] - y[i]));
    peak = std::max(peak, std::abs(y[i]));
  }
  return worst / peak;
}

Tensor crop(const Tensor& t, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w) {
  const auto v = t.to_doubles();
  const std::int64_t c = t.dim(1), H = t.dim(2), W = t.dim(3);
  std::vector<double> out;
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = y0; y < y0 + h; ++y)
      for (std::int64_t x = x0; x < x0 + w; ++x) out.push_back(v[static_cast<std::size_t>((ch * H + y) * W + x)]);
  return Tensor::from_vector({1, c, h, w}, std::move(out));
}

void perturb_all(Model& m, std::uint64_t seed, double scale = 0.05) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  for (auto& p : m.parameters())
    visit_dtype(p.value.dtype(), [&]<typename T>() {
      for (T& x : p.value.data<T>()) x += static_cast<T>(d(rng));
    });
}

BaselineSRSpec small_sr(int scale = 2, Upsampler up = Upsampler::subpixel_direct) {
  BaselineSRSpec s;
  s.n_feats = 8;
  s.n_blocks = 2;
  s.scale = scale;
  s.upsampler = up;
  return s;
}

DenoiserSpec small_den(bool residual = true) {
  DenoiserSpec d;
  d.depth = 4;
  d.n_feats = 8;
  d.residual_output = residual;
  return d;
}

}  // namespace

TEST(ParameterCount, HandComputedBaseline) {
  // head 3*8*9+8, two blocks of 2*(8*8*9+8)+1, body end 8*8*9+8,
  // upsampler 8*32*9+32, tail 8*3*9+3
  const std::int64_t expected = 224 + 2 * (2 * 584 + 1) + 584 + 2336 + 219;
  EXPECT_EQ(expected, 5701);
  auto model = build_baseline(small_sr());
  EXPECT_EQ(model->parameter_count(), expected);
  EXPECT_EQ(baseline_parameter_count(small_sr()), expected);
}

TEST(ParameterCount, FormulaMatchesEnumerationForEveryKind) {
  std::vector<CompositeSpec> matrix;
  for (auto up : {Upsampler::subpixel_direct, Upsampler::subpixel_chained_x2, Upsampler::transposed_conv})
    for (int scale : {2, 4, 8})
      for (bool trainable : {true, false}) {
        CompositeSpec c;
        c.sr = small_sr(scale, up);
        c.sr.residual_scale_trainable = trainable;
        matrix.push_back(c);
      }
  for (auto kind : {ModelKind::denoiser, ModelKind::dnisr, ModelKind::dnsr, ModelKind::adrsr})
    for (bool residual : {true, false}) {
      CompositeSpec c;
      c.kind = kind;
      c.denoiser = small_den(residual);
      c.sr = small_sr();
      c.levels = 3;
      matrix.push_back(c);
    }
  for (const auto& c : matrix) {
    auto model = build_model(c);
    EXPECT_EQ(model->parameter_count(), composite_parameter_count(c))
        << to_string(c.kind) << " " << to_string(c.sr.upsampler) << " x" << c.sr.scale;
  }
}

TEST(Baseline, OutputShapes) {
  std::mt19937_64 rng(1);
  auto x4 = build_baseline(small_sr(4));
  EXPECT_EQ(x4->forward(image_input(rng, 16, 16)).shape(), (Shape{1, 3, 64, 64}));
  const Tensor in = image_input(rng, 6, 5);
  const auto direct = build_baseline(small_sr(8))->forward(in).shape();
  EXPECT_EQ(direct, (Shape{1, 3, 48, 40}));
  EXPECT_EQ(build_baseline(small_sr(8, Upsampler::subpixel_chained_x2))->forward(in).shape(), direct);
  EXPECT_EQ(build_baseline(small_sr(8, Upsampler::transposed_conv))->forward(in).shape(), direct);
}

TEST(Baseline, ZeroWeightsGiveZeroOutput) {
  auto model = build_baseline(small_sr(2));
  for (auto& p : model->parameters()) p.value.copy_from(Tensor::zeros(p.value.shape(), p.value.dtype()));
  std::mt19937_64 rng(2);
  for (double v : model->forward(image_input(rng, 8, 8)).to_doubles()) EXPECT_EQ(v, 0.0);
}

TEST(Baseline, InvalidSpecsRejected) {
  auto bad = small_sr(3, Upsampler::subpixel_chained_x2);
  EXPECT_THROW(build_baseline(bad), ConfigError);
  bad = small_sr(3, Upsampler::transposed_conv);
  EXPECT_THROW(build_baseline(bad), ConfigError);
  bad = small_sr(2);
  bad.kernel = 4;
  EXPECT_THROW(build_baseline(bad), ConfigError);
  EXPECT_THROW(parse_upsampler("bilinear"), ConfigError);
  EXPECT_NO_THROW(build_baseline(small_sr(3)));
}

TEST(Baseline, FrozenResidualScaleIsNotAParameter) {
  auto spec = small_sr();
  spec.residual_scale_trainable = false;
  auto model = build_baseline(spec);
  EXPECT_FALSE(model->has_parameter("body.0.res_scale"));
  spec.residual_scale_trainable = true;
  auto trainable = build_baseline(spec);
  EXPECT_EQ(trainable->parameter("body.1.res_scale").value.item(), 0.1f);
}

TEST(Denoiser, ZeroResidualBranchIsIdentity) {
  auto model = build_denoiser(small_den());
  auto& w = model->parameter("tail.weight").value;
  w.copy_from(Tensor::zeros(w.shape(), w.dtype()));
  std::mt19937_64 rng(3);
  const Tensor x = image_input(rng, 17, 31);
  const Tensor y = model->forward(x);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_TRUE(bit_equal(y, x));
  EXPECT_THROW(build_denoiser(DenoiserSpec{2, 8, 3, true}), ConfigError);
}

TEST(Dnisr, InitialForwardMatchesTwoStagePipeline) {
  auto den = build_denoiser(small_den(), {11});
  auto sr = build_baseline(small_sr(2), {12});
  perturb_all(*den, 13);
  perturb_all(*sr, 14);
  auto dnisr = build_dnisr(*den, *sr);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = image_input(rng, 12 + trial, 14);
    const Tensor two_stage = sr->forward(den->forward(x));
    const Tensor joint = dnisr->forward(x);
    ASSERT_EQ(joint.shape(), (Shape{1, 3, 2 * (12 + trial), 28}));
    EXPECT_LE(scaled_diff(joint, two_stage), 1e-6) << "trial " << trial;
  }
}

TEST(Dnisr, ZeroInitialisedChannelsReceiveGradient) {
  auto dnisr = build_dnisr(*build_denoiser(small_den(), {1}), *build_baseline(small_sr(2), {2}));
  std::mt19937_64 rng(5);
  const Tensor x = image_input(rng, 10, 10);
  ops::mean(ops::abs(dnisr->forward(x))).backward();
  const Tensor g = dnisr->parameter("sr.head.weight").value.grad();
  const Tensor w = dnisr->parameter("sr.head.weight").value;
  const std::int64_t k2 = 9;
  double grad_mass = 0.0;
  for (std::int64_t o = 0; o < w.dim(0); ++o)
    for (std::int64_t c = 3; c < 6; ++c)
      for (std::int64_t i = 0; i < k2; ++i) {
        EXPECT_EQ(w.at((o * 6 + c) * k2 + i), 0.0);
        grad_mass += std::abs(g.at((o * 6 + c) * k2 + i));
      }
  EXPECT_GT(grad_mass, 0.0);
}

TEST(Dnsr, ComposedKernelMatchesImpulseResponse) {
  std::mt19937_64 rng(6);
  const Tensor first = srlab::testing::random_tensor({3, 5, 3, 3}, rng);
  const Tensor second = srlab::testing::random_tensor({4, 3, 3, 3}, rng);
  const Tensor composed = compose_kernels(first, second);
  ASSERT_EQ(composed.shape(), (Shape{4, 5, 5, 5}));
  const int kb = 5, n = 2 * kb - 1;
  for (int c = 0; c < 5; ++c) {
    std::vector<double> impulse(static_cast<std::size_t>(5 * n * n), 0.0);
    impulse[static_cast<std::size_t>((c * n + kb - 1) * n + kb - 1)] = 1.0;
    const Tensor delta = Tensor::from_vector({1, 5, n, n}, impulse);
    const auto mid = srlab::testing::reference_conv2d(delta, first, Tensor(), 1, 0);
    const Tensor mid_t = Tensor::from_vector({1, 3, n - 2, n - 2}, mid);
    const auto response = srlab::testing::reference_conv2d(mid_t, second, Tensor(), 1, 0);
    for (int o = 0; o < 4; ++o)
      for (int i = 0; i < kb; ++i)
        for (int j = 0; j < kb; ++j)
          EXPECT_NEAR(composed.at({o, c, i, j}),
                      response[static_cast<std::size_t>((o * kb + kb - 1 - i) * kb + kb - 1 - j)], 1e-12);
  }
}

TEST(Dnsr, BridgeParameterCount) {
  auto dnsr = build_dnsr(*build_denoiser(small_den(false)), *build_baseline(small_sr()));
  EXPECT_EQ(dnsr->parameter("bridge.weight").value.numel() + dnsr->parameter("bridge.bias").value.numel(),
            8 * 8 * 25 + 8);
  EXPECT_FALSE(dnsr->has_parameter("skip.weight"));
  EXPECT_FALSE(dnsr->has_parameter("denoiser.tail.weight"));
  EXPECT_FALSE(dnsr->has_parameter("sr.head.weight"));
}

TEST(Dnsr, IncompatibleBridgeKernelRejected) {
  EXPECT_THROW(build_dnsr(*build_denoiser(small_den()), *build_baseline(small_sr()), 3), ConfigError);
}

// The composed bridge sees zero-padded denoiser features, while the two-stage
// pipeline zero-pads the 3-channel intermediate. The two agree exactly away
// from the border; the test pins the interior and measures that the
// difference is confined to the receptive-field margin.
TEST(Dnsr, InitialForwardMatchesTwoStageInTheInterior) {
  for (bool residual : {true, false}) {
    auto den = build_denoiser(small_den(residual), {21, DType::f64});
    auto sr = build_baseline(small_sr(2), {22, DType::f64});
    perturb_all(*den, 23);
    perturb_all(*sr, 24);
    auto dnsr = build_dnsr(*den, *sr);
    std::mt19937_64 rng(7);
    // Head padding 1 LR px, then 2 blocks x 2 convs, body end and upsample convs
    // widen it to 7 LR px; the tail conv adds one HR px.
    const int margin = 2 * 7 + 1;
    for (int trial = 0; trial < 10; ++trial) {
      const int h = 24 + trial % 3, w = 26;
      const Tensor x = image_input(rng, h, w, DType::f64);
      const Tensor two_stage = sr->forward(den->forward(x));
      const Tensor joint = dnsr->forward(x);
      const Tensor a = crop(joint, margin, margin, 2 * h - 2 * margin, 2 * w - 2 * margin);
      const Tensor b = crop(two_stage, margin, margin, 2 * h - 2 * margin, 2 * w - 2 * margin);
      EXPECT_LE(scaled_diff(a, b), 1e-12) << "residual=" << residual << " trial " << trial;
    }
  }
}

TEST(Dnsr, F32InteriorWithinTolerance) {
  auto den = build_denoiser(small_den(), {31});
  auto sr = build_baseline(small_sr(2), {32});
  auto dnsr = build_dnsr(*den, *sr);
  std::mt19937_64 rng(8);
  const Tensor x = image_input(rng, 32, 32);
  const int margin = 15;
  const Tensor a = crop(dnsr->forward(x), margin, margin, 64 - 2 * margin, 64 - 2 * margin);
  const Tensor b = crop(sr->forward(den->forward(x)), margin, margin, 64 - 2 * margin, 64 - 2 * margin);
  EXPECT_LE(scaled_diff(a, b), 1e-4);
}

TEST(Adrsr, SingleLevelIsTheBaseline) {
  auto spec = small_sr(2);
  auto baseline = build_baseline(spec, {41});
  auto pyramid = build_adrsr(spec, 1, 3, {42});
  EXPECT_EQ(pyramid->parameter_count(), baseline->parameter_count());
  copy_parameters(*baseline, *pyramid, "level0.");
  std::mt19937_64 rng(9);
  const Tensor x = image_input(rng, 11, 13);
  EXPECT_TRUE(bit_equal(pyramid->forward(x), baseline->forward(x)));
}

TEST(Adrsr, LevelShapes) {
  auto model = build_adrsr(small_sr(8), 3);
  std::mt19937_64 rng(10);
  const Tensor x = image_input(rng, 32, 32);
  const auto outs = model->level_outputs(x);
  ASSERT_EQ(outs.size(), 3u);
  EXPECT_EQ(outs[0].shape(), (Shape{1, 3, 256, 256}));
  EXPECT_EQ(outs[1].shape(), (Shape{1, 3, 128, 128}));
  EXPECT_EQ(outs[2].shape(), (Shape{1, 3, 64, 64}));
  EXPECT_EQ(model->forward(x).shape(), (Shape{1, 3, 256, 256}));
  EXPECT_EQ(model->forward_from(x, 2).shape(), (Shape{1, 3, 64, 64}));
}

TEST(Adrsr, InitialFusePassesFinestLevelThrough) {
  auto model = build_adrsr(small_sr(2), 3, 3, {43});
  std::mt19937_64 rng(11);
  const Tensor x = image_input(rng, 32, 32);
  EXPECT_TRUE(bit_equal(model->forward(x), model->level_outputs(x)[0]));
  EXPECT_TRUE(bit_equal(model->forward_from(x, 1), model->level_outputs(x)[1]));
}

TEST(Adrsr, TooManyLevelsForInput) {
  auto model = build_adrsr(small_sr(2), 3);
  std::mt19937_64 rng(12);
  EXPECT_THROW(model->forward(image_input(rng, 16, 16)), ShapeError);
  EXPECT_THROW(model->forward(image_input(rng, 36, 34)), ShapeError);
  EXPECT_NO_THROW(model->forward(image_input(rng, 32, 36)));
}

TEST(TranslationConsistency, PatchEqualsCropOfLargerImage) {
  const auto f64 = BuildOptions{51, DType::f64};
  std::vector<std::pair<std::string, std::unique_ptr<Model>>> models;
  models.emplace_back("baseline", build_baseline(small_sr(2), f64));
  models.emplace_back("transposed", build_baseline(small_sr(2, Upsampler::transposed_conv), f64));
  models.emplace_back("denoiser", build_denoiser(small_den(), f64));
  auto den = build_denoiser(small_den(), f64);
  auto sr = build_baseline(small_sr(2), f64);
  models.emplace_back("dnisr", build_dnisr(*den, *sr));
  models.emplace_back("dnsr", build_dnsr(*den, *sr));
  models.emplace_back("adrsr", build_adrsr(small_sr(2), 2, 3, f64));
  std::mt19937_64 rng(13);
  const Tensor big = image_input(rng, 48, 48, DType::f64);
  // Offsets are even so the pyramid grid stays aligned.
  const int y0 = 8, x0 = 10, ph = 32, pw = 32;
  const Tensor patch = crop(big, y0, x0, ph, pw);
  for (auto& [name, model] : models) {
    const int s = model->scale();
    const Tensor full = model->forward(big);
    const Tensor local = model->forward(patch);
    // composites add the denoiser depth to the SR margin
    const int margin = (name == "adrsr" || name == "dnisr" || name == "dnsr") ? 24 : 16;
    const int inner_h = ph * s - 2 * margin, inner_w = pw * s - 2 * margin;
    const Tensor a = crop(local, margin, margin, inner_h, inner_w);
    const Tensor b = crop(full, y0 * s + margin, x0 * s + margin, inner_h, inner_w);
    EXPECT_LE(scaled_diff(a, b), 1e-5) << name;
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  CompositeSpec spec;
  spec.kind = ModelKind::dnsr;
  spec.denoiser = small_den();
  spec.sr = small_sr(4, Upsampler::transposed_conv);
  auto model = build_model(spec, {61});
  perturb_all(*model, 62);
  model->per_image_mean_shift = false;
  const auto path = scratch("dnsr.ckpt");
  save_checkpoint(*model, path);
  auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded->kind(), ModelKind::dnsr);
  EXPECT_EQ(loaded->spec(), model->spec());
  EXPECT_FALSE(loaded->per_image_mean_shift);
  EXPECT_EQ(parameter_hash(*loaded), parameter_hash(*model));
  std::mt19937_64 rng(14);
  const Tensor x = image_input(rng, 9, 10);
  EXPECT_TRUE(bit_equal(loaded->forward(x), model->forward(x)));
}

TEST(Checkpoint, OptimizerStateTravels) {
  auto model = build_baseline(small_sr(), {63});
  Adam adam;
  std::mt19937_64 rng(15);
  ops::mean(model->forward(image_input(rng, 6, 6))).backward();
  adam.step(model->parameters());
  const auto path = scratch("opt.ckpt");
  save_checkpoint(*model, path, &adam);
  Adam restored;
  auto loaded = load_checkpoint(path, &restored);
  EXPECT_EQ(restored.steps_taken(), 1);
  const auto a = adam.state(), b = restored.state();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_TRUE(bit_equal(a[i].second, b[i].second));
  }
}

TEST(Checkpoint, PartialLoadByPrefix) {
  auto spec = small_sr(2);
  auto donor = build_adrsr(spec, 2, 3, {64});
  perturb_all(*donor, 65);
  const auto path = scratch("adrsr.ckpt");
  save_checkpoint(*donor, path);
  auto target = build_adrsr(spec, 2, 3, {66});
  const auto level1_before = parameter_hash(*target, "level1.");
  const auto fuse_before = parameter_hash(*target, "fuse0.");
  const std::size_t n = load_parameters(*target, path, {"level0.", "level0."});
  EXPECT_EQ(n, build_baseline(spec)->parameters().size());
  EXPECT_EQ(parameter_hash(*target, "level0."), parameter_hash(*donor, "level0."));
  EXPECT_EQ(parameter_hash(*target, "level1."), level1_before);
  EXPECT_EQ(parameter_hash(*target, "fuse0."), fuse_before);
  EXPECT_NE(parameter_hash(*target, "level1."), parameter_hash(*donor, "level1."));

  // A plain baseline checkpoint loads into one pyramid level.
  auto base = build_baseline(spec, {67});
  save_checkpoint(*base, scratch("base.ckpt"));
  EXPECT_EQ(load_parameters(*target, scratch("base.ckpt"), {"", "level1."}), base->parameters().size());
  EXPECT_THROW(load_parameters(*target, scratch("base.ckpt"), {"", "level7."}), CheckpointError);
}

TEST(Checkpoint, CorruptionDetected) {
  auto model = build_baseline(small_sr(), {68});
  const auto path = scratch("good.ckpt");
  save_checkpoint(*model, path);
  std::vector<char> bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  auto write = [](const fs::path& p, const std::vector<char>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  write(scratch("magic.ckpt"), bad_magic);
  try {
    load_checkpoint(scratch("magic.ckpt"));
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("not a checkpoint"), std::string::npos);
  }
  auto bad_version = bytes;
  bad_version[8] = 2;
  write(scratch("version.ckpt"), bad_version);
  EXPECT_THROW(load_checkpoint(scratch("version.ckpt")), CheckpointError);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  write(scratch("trunc.ckpt"), truncated);
  EXPECT_THROW(load_checkpoint(scratch("trunc.ckpt")), CheckpointError);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  write(scratch("flip.ckpt"), flipped);
  EXPECT_THROW(load_checkpoint(scratch("flip.ckpt")), CheckpointError);
  EXPECT_THROW(load_checkpoint(scratch("absent.ckpt")), FileNotFoundError);
}

TEST(Checkpoint, HeaderLayout) {
  auto model = build_denoiser(small_den(), {69});
  const auto path = scratch("layout.ckpt");
  save_checkpoint(*model, path);
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(std::string(b.begin(), b.begin() + 8), "SRCKPT01");
  EXPECT_EQ(b[8] | b[9] << 8 | b[10] << 16 | b[11] << 24, 1);
  const std::uint32_t count = b[12] | b[13] << 8 | b[14] << 16 | static_cast<std::uint32_t>(b[15]) << 24;
  EXPECT_EQ(count, model->parameters().size() + model->spec().size());
}
