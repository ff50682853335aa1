#pragma once

// Geometric augmentation: rectify a sample with its own label, then distort it
// again by a displacement drawn from the training label pool.

#include <random>
#include <vector>

#include "shelfrect/dataset.hpp"
#include "shelfrect/error.hpp"
#include "shelfrect/geom.hpp"
#include "shelfrect/image.hpp"
#include "shelfrect/record.hpp"
#include "shelfrect/rng.hpp"
#include "shelfrect/warp.hpp"

namespace shelfrect {

/// Multiset of training labels at working resolution; both sides mixed.
struct DisplacementPool {
  std::vector<DisplacementVector> entries;
  int working_size = 0;
};

struct AugmentConfig {
  double probability = 0.5;
  std::uint64_t seed = 0;

  void check() const {
    if (!(probability >= 0.0 && probability <= 1.0)) throw OutOfRange("augment.probability must be in [0, 1]");
  }
};

inline DisplacementPool build_pool(const DatasetSplit& train, int working_size) {
  if (train.records.empty()) throw EmptySplit("cannot build an augmentation pool from an empty split");
  if (working_size <= 0) throw OutOfRange("working size must be positive");
  DisplacementPool pool;
  pool.working_size = working_size;
  pool.entries.reserve(train.records.size());
  for (const auto& r : train.records) {
    auto d = rescale_label(r, working_size, working_size);
    check_annotation_legal(d, r.side, working_size);
    pool.entries.push_back(d);
  }
  return pool;
}

inline const DisplacementVector& sample(const DisplacementPool& pool, Rng& rng) {
  if (pool.entries.empty()) throw EmptySplit("augmentation pool is empty");
  std::uniform_int_distribution<std::size_t> pick(0, pool.entries.size() - 1);
  return pool.entries[pick(rng)];
}

struct AugmentResult {
  ImageBuffer image;
  ValidityMask mask;  // pixels that carry image content rather than fill
  DisplacementVector label;
  bool applied = false;
};

/// With probability p, rectifies `img` by `label` and re-distorts it by a pooled
/// displacement d_new (output p samples the rectified image at H(d_new) p); the new
/// label is d_new itself. Otherwise returns the input unchanged.
inline AugmentResult augment_sample(const ImageBuffer& img, const DisplacementVector& label,
                                    const DisplacementPool& pool, const AugmentConfig& cfg, Rng& rng) {
  cfg.check();
  if (!side_consistent(label, Side::left) && !side_consistent(label, Side::right))
    throw InvariantViolation("label moves corners on both sides");
  check_annotation_legal(label, side_consistent(label, Side::left) ? Side::left : Side::right, img.height());

  const bool apply = std::bernoulli_distribution(cfg.probability)(rng);
  if (!apply) return {img, ValidityMask(img.width(), img.height(), true), label, false};

  const DisplacementVector& d_new = sample(pool, rng);
  const int w = img.width(), h = img.height();
  const WarpResult unwarped = warp_image(img, displacement_to_homography(label, w, h));
  WarpResult rewarped = warp_masked(unwarped, displacement_to_homography(d_new, w, h).matrix(), w, h);
  return {std::move(rewarped.image), std::move(rewarped.mask), d_new, true};
}

}  // namespace shelfrect
