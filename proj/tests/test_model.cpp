#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "shelfrect/model.hpp"
#include "test_support.hpp"

namespace shelfrect {
namespace {

ModelConfig small_config(int size = 32, std::vector<int> widths = {4, 6, 8}) {
  ModelConfig c;
  c.input_size = size;
  c.widths = std::move(widths);
  return c;
}

TEST(Architecture, ParameterCountFormula) {
  ModelConfig c = small_config(32, {4});
  // 9*3*4 + 4 conv, 4*4 + 4 head
  EXPECT_EQ(param_count(c), 132u);
  c = ModelConfig{};
  std::size_t expect = 0;
  int cin = 3;
  for (int w : c.widths) {
    expect += 9 * cin * w + w;
    cin = w;
  }
  expect += 4 * cin + 4;
  EXPECT_EQ(param_count(c), expect);
  c.head = Head::three_point;
  EXPECT_EQ(param_count(c), expect - cin - 1);
}

TEST(Architecture, FingerprintRoundTrip) {
  ModelConfig c = small_config(56, {8, 12, 16});
  c.head = Head::three_point;
  c.normalize = false;
  c.channels = 1;
  const auto back = ModelConfig::from_fingerprint(c.fingerprint());
  EXPECT_EQ(back.fingerprint(), c.fingerprint());
  EXPECT_THROW(ModelConfig::from_fingerprint("resnet 50"), ParseError);
}

TEST(Forward, ZeroParamsGiveZeroOutput) {
  const auto cfg = small_config();
  const auto p = zero_params(cfg);
  for (unsigned s = 0; s < 3; ++s)
    for (double v : forward(p, cfg, testing::smooth_image(32, 32, 3, s))) EXPECT_EQ(v, 0.0);
}

TEST(Forward, OutputShapeAndDeterminism) {
  auto cfg = small_config();
  const auto img = testing::smooth_image(32, 32, 3, 4);
  const auto p = init_params(cfg, 1);
  const auto a = forward(p, cfg, img);
  EXPECT_EQ(a.size(), 4u);
  EXPECT_EQ(a, forward(p, cfg, img));
  EXPECT_EQ(init_params(cfg, 1).values, p.values);
  cfg.head = Head::three_point;
  EXPECT_EQ(forward(init_params(cfg, 1), cfg, img).size(), 3u);
}

TEST(Forward, ShapeMismatch) {
  const auto cfg = small_config();
  const auto p = init_params(cfg, 0);
  EXPECT_THROW(forward(p, cfg, testing::smooth_image(31, 32, 3, 0)), ShapeMismatch);
  EXPECT_THROW(forward(p, cfg, testing::smooth_image(32, 32, 1, 0)), ShapeMismatch);
  EXPECT_THROW(forward(p, small_config(32, {4}), testing::smooth_image(32, 32, 3, 0)), ShapeMismatch);
}

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize_targets({112, 0, 0, -112}, 224), (std::array<double, 4>{1, 0, 0, -1}));
  EXPECT_EQ(normalize_targets({}, 224), (std::array<double, 4>{}));
  EXPECT_THROW(normalize_targets({112.5, 0, 0, 0}, 224), OutOfRange);
}

TEST(Normalize, RoundTrip) {
  std::mt19937_64 rng(8);
  for (double h : {64.0, 128.0, 256.0, 224.0, 56.0, 37.0}) {
    std::uniform_real_distribution<double> u(-h / 2, h / 2);
    const bool pow2 = std::has_single_bit(static_cast<unsigned>(h / 2));
    for (int i = 0; i < 2000; ++i) {
      const DisplacementVector d{u(rng), u(rng), u(rng), u(rng)};
      const auto back = denormalize(normalize_targets(d, h), h);
      for (std::size_t k = 0; k < 4; ++k) {
        if (pow2)
          EXPECT_EQ(back[k], d[k]);
        else
          EXPECT_LE(std::abs(back[k] - d[k]), std::abs(std::nextafter(d[k], 2 * d[k]) - d[k]));
      }
    }
  }
}

TEST(CornerLoss, Examples) {
  const std::array<double, 4> z{};
  EXPECT_EQ(corner_loss(z, z), 0.0);
  EXPECT_EQ(corner_loss(std::array<double, 4>{1, 0, 0, 0}, z), 0.25);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    std::array<double, 4> a{n(rng), n(rng), n(rng), n(rng)}, b{n(rng), n(rng), n(rng), n(rng)};
    std::array<double, 4> diff;
    std::transform(a.begin(), a.end(), b.begin(), diff.begin(), std::minus<>());
    const double oracle = std::inner_product(diff.begin(), diff.end(), diff.begin(), 0.0) / 4.0;
    EXPECT_NEAR(corner_loss(a, b), oracle, 1e-15);
  }
}

// Params whose output is exactly `raw` regardless of input: zero weights, head bias = raw.
ModelParams constant_output(const ModelConfig& cfg, const std::vector<double>& raw) {
  auto p = zero_params(cfg);
  const auto l = layout_of(cfg);
  for (std::size_t i = 0; i < raw.size(); ++i) p.values[l.head_bias + i] = raw[i];
  return p;
}

TEST(CompositeLoss, ZeroAtTruth) {
  const auto cfg = small_config();
  const DisplacementVector gt{0, 3, -2, 0};
  const auto t = normalize_targets(gt, 32);
  const auto p = constant_output(cfg, {t.begin(), t.end()});
  const auto r = composite_loss(p, cfg, testing::smooth_image(32, 32, 3, 1), gt);
  EXPECT_TRUE(r.terms.photometric_used);
  EXPECT_EQ(r.terms.photometric, 0.0);
  EXPECT_EQ(r.terms.total, 0.0);
}

TEST(CompositeLoss, LambdaZeroIsCornerLoss) {
  auto cfg = small_config();
  cfg.lambda = 0.0;
  const auto img = testing::smooth_image(32, 32, 3, 2);
  const auto p = init_params(cfg, 3);
  const DisplacementVector gt{2, 0, 0, 5};
  const auto r = composite_loss(p, cfg, img, gt);
  EXPECT_FALSE(r.terms.photometric_used);
  EXPECT_EQ(r.terms.total, corner_loss(forward(p, cfg, img), normalize_targets(gt, 32)));
}

TEST(CompositeLoss, PositiveAwayFromTruth) {
  const auto cfg = small_config();
  const DisplacementVector gt{0, 3, -2, 0};
  const auto p = constant_output(cfg, {0.1, 0.0, 0.0, 0.0});
  const auto r = composite_loss(p, cfg, testing::smooth_image(32, 32, 3, 1), gt);
  EXPECT_GT(r.terms.corner, 0.0);
  EXPECT_GT(r.terms.photometric, 0.0);
}

TEST(CompositeLoss, FullGradientMatchesFiniteDifferences) {
  for (unsigned seed = 0; seed < 3; ++seed) {
    auto cfg = small_config();
    cfg.channels = seed == 2 ? 1 : 3;
    const auto p = init_params(cfg, seed);
    std::mt19937_64 rng(seed);
    const auto gt = testing::random_one_sided(rng, 6.0);
    const auto img = testing::smooth_image(32, 32, cfg.channels, seed + 10);
    const auto c = testing::check_full_gradient(p, cfg, img, gt, 1e-4, 1e-6);
    EXPECT_LT(c.base_gap, 1e-12);
    EXPECT_LT(c.worst, 1e-3) << "seed " << seed << " param " << c.worst_index << " analytic " << c.analytic
                             << " numeric " << c.numeric;
  }
}

TEST(CompositeLoss, ThreePointGradientMatchesFiniteDifferences) {
  auto cfg = small_config();
  cfg.head = Head::three_point;
  const auto p = init_params(cfg, 5);
  const auto c = testing::check_full_gradient(p, cfg, testing::smooth_image(32, 32, 3, 6), {0, 4, -3, 0}, 1e-4, 1e-6);
  EXPECT_LT(c.base_gap, 1e-12);
  EXPECT_LT(c.worst, 1e-3) << "param " << c.worst_index << " analytic " << c.analytic << " numeric " << c.numeric;
}

TEST(ThreePoint, DecodeRule) {
  const std::array<double, 3> left{-3.0, 0.25, -0.5};
  EXPECT_EQ(decode_three_point(left, 1.0), (DisplacementVector{0.25, 0, 0, -0.5}));
  const std::array<double, 3> right{2.0, 0.25, -0.5};
  EXPECT_EQ(decode_three_point(right, 16.0), (DisplacementVector{0, 4, -8, 0}));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    const std::array<double, 3> raw{n(rng), n(rng), n(rng)};
    const auto d = decode_three_point(raw, 10.0);
    EXPECT_TRUE(side_consistent(d, raw[0] > 0 ? Side::right : Side::left));
  }
}

TEST(ThreePoint, PerfectRegressionLeavesOnlyClassification) {
  const std::array<double, 4> target{0, 0.5, -0.25, 0};
  const std::array<double, 3> raw{4.0, 0.5, -0.25};
  std::array<double, 3> g{};
  const double loss = three_point_loss(raw, target, Side::right, 1.0, g);
  EXPECT_NEAR(loss, std::log1p(std::exp(-4.0)), 1e-15);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[2], 0.0);
}

TEST(Batch, ThreadCountDoesNotChangeResult) {
  const auto cfg = small_config();
  const auto p = init_params(cfg, 2);
  std::vector<ImageBuffer> imgs;
  std::vector<Example> batch;
  std::mt19937_64 rng(3);
  for (unsigned i = 0; i < 6; ++i) imgs.push_back(testing::smooth_image(32, 32, 3, i));
  for (unsigned i = 0; i < 6; ++i) {
    const auto d = testing::random_one_sided(rng, 5.0);
    batch.push_back({&imgs[i], d, label_side(d)});
  }
  const auto a = batch_gradient(p, cfg, batch, 1);
  const auto b = batch_gradient(p, cfg, batch, 3);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad, b.grad);
}

TEST(Checkpoint, RoundTripAndFingerprintCheck) {
  const auto cfg = small_config();
  const auto p = init_params(cfg, 9);
  const auto path = std::filesystem::temp_directory_path() / ("shelfrect_ckpt_" + std::to_string(::getpid()));
  save_checkpoint(path, p);
  const auto back = load_checkpoint(path, cfg);
  EXPECT_EQ(back.values, p.values);
  EXPECT_THROW(load_checkpoint(path, small_config(32, {4, 6})), InvariantViolation);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(load_checkpoint(path), IoError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace shelfrect
