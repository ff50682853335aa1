#include <gtest/gtest.h>

#include <cstring>
#include <map>

#include "shelfrect/augment.hpp"
#include "shelfrect/synth.hpp"
#include "test_support.hpp"

namespace shelfrect {
namespace {

DatasetSplit split_of(std::vector<DisplacementVector> ds, int size) {
  DatasetSplit s{"train", {}};
  int i = 0;
  for (const auto& d : ds) {
    const Side side = (d[kTopRight] != 0.0 || d[kBottomRight] != 0.0) ? Side::right : Side::left;
    s.records.push_back({"r" + std::to_string(i++), size, size, side, d});
  }
  return s;
}

TEST(Pool, SingleRecordGivesSingleEntry) {
  const auto pool = build_pool(split_of({DisplacementVector{4, 0, 0, -2}}, 56), 56);
  ASSERT_EQ(pool.entries.size(), 1u);
  EXPECT_EQ(pool.entries[0], (DisplacementVector{4, 0, 0, -2}));
}

TEST(Pool, EmptySplitThrows) { EXPECT_THROW(build_pool(DatasetSplit{"train", {}}, 56), EmptySplit); }

TEST(Pool, KeepsDuplicates) {
  const DisplacementVector d{0, 3, 5, 0};
  EXPECT_EQ(build_pool(split_of({d, d, d}, 56), 56).entries.size(), 3u);
}

TEST(Pool, MeanMatchesStatsAfterRescale) {
  std::mt19937_64 rng(5);
  std::vector<DisplacementVector> ds;
  for (int i = 0; i < 50; ++i) ds.push_back(testing::random_one_sided(rng, 60.0));
  const auto split = split_of(ds, 224);
  const auto pool = build_pool(split, 56);
  // conjugation by a uniform scale multiplies every displacement by 56/224
  DatasetSplit rescaled{"train", {}};
  for (const auto& r : split.records) rescaled.records.push_back({r.image_id, 56, 56, r.side, r.d.scaled(0.25)});
  const auto stats = compute_stats(rescaled);
  std::array<double, 4> mean{};
  for (const auto& d : pool.entries)
    for (std::size_t i = 0; i < 4; ++i) mean[i] += std::abs(d[i]) / pool.entries.size();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(mean[i], stats.corner_mean[i], 1e-9);
}

TEST(Sample, SingletonAlwaysReturnsIt) {
  const DisplacementPool pool{{DisplacementVector{1, 0, 0, 2}}, 56};
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample(pool, rng), (DisplacementVector{1, 0, 0, 2}));
}

TEST(Sample, UniformOverEntries) {
  DisplacementPool pool;
  for (int i = 0; i < 10; ++i) pool.entries.push_back(DisplacementVector{double(i), 0, 0, 0});
  Rng rng(2024);
  std::array<int, 10> hits{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) hits[static_cast<std::size_t>(sample(pool, rng)[0])]++;
  for (int h : hits) EXPECT_NEAR(double(h) / n, 0.1, 0.01);
}

TEST(Sample, SeededSequenceRepeats) {
  DisplacementPool pool;
  for (int i = 0; i < 7; ++i) pool.entries.push_back(DisplacementVector{double(i), 0, 0, 0});
  Rng a(9), b(9);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample(pool, a), sample(pool, b));
}

TEST(Augment, ZeroProbabilityPassesThrough) {
  const auto img = testing::smooth_image(32, 32, 3, 1);
  const DisplacementVector label{3, 0, 0, -2};
  const DisplacementPool pool{{DisplacementVector{0, 4, 1, 0}}, 32};
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto r = augment_sample(img, label, pool, {0.0, 0}, rng);
    EXPECT_FALSE(r.applied);
    EXPECT_EQ(r.image, img);
    EXPECT_EQ(r.label, label);
  }
}

TEST(Augment, SingletonPoolLabelIsExact) {
  const DisplacementVector star{0, 2.718281828, -3.14159, 0};
  const DisplacementPool pool{{star}, 32};
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto r = augment_sample(testing::smooth_image(32, 32, 1, i), {1, 0, 0, 1}, pool, {1.0, 0}, rng);
    EXPECT_TRUE(r.applied);
    EXPECT_EQ(std::memcmp(&r.label, &star, sizeof star), 0);
  }
}

TEST(Augment, RejectsIllegalLabel) {
  const DisplacementPool pool{{DisplacementVector{}}, 32};
  Rng rng(0);
  const auto img = testing::smooth_image(32, 32, 1, 0);
  EXPECT_THROW(augment_sample(img, {1, 1, 0, 0}, pool, {1.0, 0}, rng), InvariantViolation);
  EXPECT_THROW(augment_sample(img, {16, 0, 0, 0}, pool, {1.0, 0}, rng), InvariantViolation);
  EXPECT_THROW(augment_sample(img, {}, pool, {1.5, 0}, rng), OutOfRange);
}

TEST(Augment, UnwarpByNewLabelRecoversRectifiedImage) {
  const int size = 56;
  Rng rng(77);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_synthetic(SyntheticSceneSpec::from_seed(seed, size));
    const auto other = generate_synthetic(SyntheticSceneSpec::from_seed(seed + 1000, size));
    const DisplacementPool pool{{other.record.d}, size};
    const auto unwarped = unwarp_to_fronto_parallel(s.image, s.record);
    const auto aug = augment_sample(s.image, s.record.d, pool, {1.0, 0}, rng);
    const auto back = warp_masked({aug.image, aug.mask}, invert(displacement_to_homography(aug.label, size, size)).matrix(),
                                  size, size);
    const auto joint = back.mask & unwarped.mask;
    ASSERT_GT(joint.count(), std::size_t(size * size / 2));
    EXPECT_LE(testing::mean_abs_on_mask(back.image, unwarped.image, joint), 0.03) << "seed " << seed;
  }
}

TEST(Augment, MarkerMovesWithNewLabel) {
  const int size = 56;
  const Point q{30.0, 20.0};
  ImageBuffer img(size, size, 1);
  for (int y = 19; y <= 21; ++y)
    for (int x = 29; x <= 31; ++x) img.at(0, y, x) = 1.0;
  const DisplacementVector d_new{0, 6.5, -4.0, 0};
  const DisplacementPool pool{{d_new}, size};
  Rng rng(0);
  const auto r = augment_sample(img, {}, pool, {1.0, 0}, rng);
  double sx = 0, sy = 0, sw = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double v = r.image.at(0, y, x);
      sx += v * x;
      sy += v * y;
      sw += v;
    }
  const Point expect = apply(invert(displacement_to_homography(d_new, size, size)), q);
  EXPECT_NEAR(sx / sw, expect.x, 0.3);
  EXPECT_NEAR(sy / sw, expect.y, 0.3);
}

TEST(Augment, AppliedFrequencyMatchesProbability) {
  const DisplacementPool pool{{DisplacementVector{}}, 8};
  const auto img = testing::smooth_image(8, 8, 1, 0);
  Rng rng(11);
  int applied = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) applied += augment_sample(img, {}, pool, {0.5, 0}, rng).applied;
  EXPECT_NEAR(double(applied) / n, 0.5, 0.02);
}

}  // namespace
}  // namespace shelfrect
