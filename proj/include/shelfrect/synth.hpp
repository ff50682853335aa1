#pragma once

// Synthetic shelf imagery standing in for real annotated captures: a
// fronto-parallel shelf (dark horizontal boards, coloured product boxes on a
// light back wall) distorted by a known one-sided vertical displacement.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <tuple>

#include "shelfrect/dataset.hpp"
#include "shelfrect/geom.hpp"
#include "shelfrect/image.hpp"
#include "shelfrect/record.hpp"
#include "shelfrect/rng.hpp"
#include "shelfrect/warp.hpp"

namespace shelfrect {

/// Per-corner magnitude model at 224 px: normal(19, 8) truncated to [0, 56].
struct DisplacementSampler {
  double mean = 19.0;
  double stddev = 8.0;
  double lo = 0.0;
  double hi = 56.0;
  double reference_size = 224.0;

  double magnitude(Rng& rng) const {
    std::normal_distribution<double> n(mean, stddev);
    for (;;) {
      const double v = n(rng);
      if (v >= lo && v <= hi) return v;
    }
  }

  /// Uniform side, independent sign per moved corner, magnitudes scaled to `size`.
  std::pair<Side, DisplacementVector> operator()(Rng& rng, int size) const {
    const Side side = std::bernoulli_distribution(0.5)(rng) ? Side::right : Side::left;
    const double scale = size / reference_size;
    DisplacementVector d;
    for (auto corner : side_corners(side)) {
      const double m = magnitude(rng) * scale;
      d[corner] = std::bernoulli_distribution(0.5)(rng) ? m : -m;
    }
    return {side, d};
  }
};

struct SyntheticSceneSpec {
  std::uint64_t seed = 0;
  int size = 224;
  int shelf_rows = 4;
  int products_per_row = 6;  // average; actual count varies with widths
  std::optional<DisplacementVector> displacement;  // sampled when absent
  std::optional<Side> side;
  double blur_sigma = 1.0;  // optical blur of the render, pixels

  /// Scene parameters drawn from the seed itself (3-5 shelves, 4-8 products per row).
  static SyntheticSceneSpec from_seed(std::uint64_t seed, int size) {
    Rng rng(derive_seed(seed, {0x5ce4e}));
    SyntheticSceneSpec s;
    s.seed = seed;
    s.size = size;
    s.shelf_rows = std::uniform_int_distribution<int>(3, 5)(rng);
    s.products_per_row = std::uniform_int_distribution<int>(4, 8)(rng);
    return s;
  }
};

struct SyntheticSample {
  ImageBuffer image;   // distorted capture
  ImageBuffer fronto;  // the fronto-parallel render it was made from
  AnnotationRecord record;
};

inline std::string synthetic_id(std::uint64_t seed) {
  std::string n = std::to_string(seed);
  if (n.size() < 6) n.insert(0, 6 - n.size(), '0');
  return "syn_" + n;
}

namespace detail {

struct Rect {
  double x0, y0, x1, y1;
  std::array<double, 3> color;
};

inline double coverage(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

// Separable Gaussian, edge-clamped.
inline ImageBuffer gaussian_blur(const ImageBuffer& src, double sigma) {
  if (!(sigma > 0.0)) return src;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  const int w = src.width(), h = src.height();
  ImageBuffer tmp(w, h, src.channels()), out(w, h, src.channels());
  for (int c = 0; c < src.channels(); ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) s += k[i + radius] * src.at(c, y, std::clamp(x + i, 0, w - 1));
        tmp.at(c, y, x) = s;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.at(c, std::clamp(y + i, 0, h - 1), x);
        out.at(c, y, x) = std::clamp(s, 0.0, 1.0);
      }
  }
  return out;
}

}  // namespace detail

/// Shelf scene rendered over [-margin, size + margin]^2 with area-weighted
/// (anti-aliased) edges; the centre size x size crop is the fronto-parallel view.
inline ImageBuffer render_shelf(const SyntheticSceneSpec& spec, int margin = 0) {
  Rng rng(derive_seed(spec.seed, {0x7e4de7}));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double s = spec.size;
  const double lo = -margin, hi = s + margin;

  std::vector<detail::Rect> rects;
  const double wall = 0.78 + 0.14 * u01(rng);
  const std::array<double, 3> wall_color{wall, wall - 0.03 * u01(rng), wall - 0.06 * u01(rng)};

  const int rows = std::max(1, spec.shelf_rows);
  const double pitch = s / rows;
  const double board = std::max(1.5, 0.06 * pitch);
  const int first = static_cast<int>(std::floor(lo / pitch)) - 1;
  const int last = static_cast<int>(std::ceil(hi / pitch)) + 1;
  for (int r = first; r < last; ++r) {
    const double board_top = (r + 1) * pitch - board - 0.15 * pitch * u01(rng);
    const double shade = 0.12 + 0.12 * u01(rng);
    rects.push_back({lo - 1.0, board_top, hi + 1.0, board_top + board, {shade, shade, shade}});

    const double floor_y = board_top;
    const double ceiling_y = r * pitch;
    const double mean_w = s / std::max(1, spec.products_per_row);
    double x = lo - mean_w * u01(rng);
    while (x < hi) {
      const double w = mean_w * (0.55 + 0.8 * u01(rng));
      const double h = (floor_y - ceiling_y) * (0.45 + 0.45 * u01(rng));
      const std::array<double, 3> col{0.1 + 0.8 * u01(rng), 0.1 + 0.8 * u01(rng), 0.1 + 0.8 * u01(rng)};
      const double gap = 0.08 * mean_w * u01(rng);
      rects.push_back({x + gap, floor_y - h, x + w, floor_y, col});
      // label band across the box
      const double band = 0.25 * h;
      const std::array<double, 3> lab{0.5 * col[0] + 0.45, 0.5 * col[1] + 0.45, 0.5 * col[2] + 0.45};
      rects.push_back({x + gap + 0.15 * w, floor_y - 0.6 * h, x + 0.85 * w, floor_y - 0.6 * h + band, lab});
      x += w;
    }
  }

  const int n = spec.size + 2 * margin;
  ImageBuffer img(n, n, 3);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double px = x - margin, py = y - margin;
      // painter's algorithm with fractional coverage of the pixel square
      std::array<double, 3> c = wall_color;
      for (const auto& r : rects) {
        const double a = detail::coverage(px, px + 1.0, r.x0, r.x1) * detail::coverage(py, py + 1.0, r.y0, r.y1);
        if (a <= 0.0) continue;
        for (int k = 0; k < 3; ++k) c[k] = c[k] * (1.0 - a) + r.color[k] * a;
      }
      for (int k = 0; k < 3; ++k) img.at(k, y, x) = std::clamp(c[k], 0.0, 1.0);
    }
  return detail::gaussian_blur(img, spec.blur_sigma);
}

/// Renders the scene and distorts it: output pixel p samples the scene at H(d) p,
/// so rectifying with H(d) recovers the fronto-parallel view. The scene extends
/// past the frame, so the distorted capture has no empty regions.
inline SyntheticSample generate_synthetic(const SyntheticSceneSpec& spec) {
  if (spec.size < 8) throw OutOfRange("synthetic image size must be at least 8");
  Side side;
  DisplacementVector d;
  if (spec.displacement) {
    d = *spec.displacement;
    side = spec.side.value_or((d[kTopLeft] != 0.0 || d[kBottomLeft] != 0.0) ? Side::left : Side::right);
  } else {
    Rng rng(derive_seed(spec.seed, {0xd15b}));
    std::tie(side, d) = DisplacementSampler{}(rng, spec.size);
  }
  AnnotationRecord rec{synthetic_id(spec.seed), spec.size, spec.size, side, d};
  validate(rec);

  double reach = 0.0;
  for (double v : d.d) reach = std::max(reach, std::abs(v));
  const int margin = static_cast<int>(std::ceil(2.0 * reach)) + 4;
  const ImageBuffer canvas = render_shelf(spec, margin);

  SyntheticSample out;
  out.fronto = ImageBuffer(spec.size, spec.size, 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < spec.size; ++y)
      for (int x = 0; x < spec.size; ++x) out.fronto.at(c, y, x) = canvas.at(c, y + margin, x + margin);

  const Homography h = displacement_to_homography(d, spec.size, spec.size);
  const Mat3 to_canvas = mat3::multiply({1, 0, double(margin), 0, 1, double(margin), 0, 0, 1}, h.matrix());
  out.image = warp_with_inverse(canvas, to_canvas, spec.size, spec.size).image;
  out.record = std::move(rec);
  return out;
}

/// `count` scenes seeded base_seed * 1e6 + i, split 80/10/10 into train/val/test.
/// Distorted images are appended to `images` in record order when given.
inline Dataset generate_synthetic_dataset(std::uint64_t base_seed, std::size_t count, int size,
                                          std::vector<ImageBuffer>* images = nullptr) {
  Dataset ds;
  const std::size_t n_val = count / 10, n_test = count / 10;
  const std::size_t n_train = count - n_val - n_test;
  for (std::size_t i = 0; i < count; ++i) {
    const auto seed = base_seed * 1'000'000ULL + i;
    auto sample = generate_synthetic(SyntheticSceneSpec::from_seed(seed, size));
    auto& split = i < n_train ? ds.train : (i < n_train + n_val ? ds.val : ds.test);
    split.records.push_back(sample.record);
    if (images) images->push_back(std::move(sample.image));
  }
  return ds;
}

}  // namespace shelfrect
