#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "shelfrect/error.hpp"
#include "shelfrect/geom.hpp"
#include "shelfrect/text.hpp"

namespace shelfrect {

/// Which image side the annotator moved. The other side's corners stay at 0.
enum class Side { left, right };

inline std::string_view to_string(Side s) { return s == Side::left ? "left" : "right"; }

inline Side parse_side(std::string_view s) {
  if (s == "left" || s == "Left" || s == "L") return Side::left;
  if (s == "right" || s == "Right" || s == "R") return Side::right;
  throw ParseError("side must be 'left' or 'right', got '" + std::string(s) + "'");
}

/// Corners owned by a side: left -> TL, BL; right -> TR, BR.
inline std::array<std::size_t, 2> side_corners(Side s) {
  return s == Side::left ? std::array<std::size_t, 2>{kTopLeft, kBottomLeft}
                         : std::array<std::size_t, 2>{kTopRight, kBottomRight};
}

inline bool side_consistent(const DisplacementVector& d, Side s) {
  return s == Side::left ? (d[kTopRight] == 0.0 && d[kBottomRight] == 0.0)
                         : (d[kTopLeft] == 0.0 && d[kBottomLeft] == 0.0);
}

/// Ground truth for one image, in original-resolution pixels.
struct AnnotationRecord {
  std::string image_id;
  int orig_width = 0;
  int orig_height = 0;
  Side side = Side::left;
  DisplacementVector d;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

/// Throws InvariantViolation if `d` is not a legal annotation for an image of `height` rows.
inline void check_annotation_legal(const DisplacementVector& d, Side side, double height) {
  if (!d.finite()) throw InvariantViolation("displacement has non-finite values");
  if (!side_consistent(d, side))
    throw InvariantViolation("displacement moves corners on both sides (side=" + std::string(to_string(side)) + ")");
  for (double v : d.d)
    if (!(std::abs(v) < height / 2.0))
      throw InvariantViolation("displacement " + text::format_double(v) + " exceeds half the image height");
}

inline void validate(const AnnotationRecord& r) {
  if (r.image_id.empty()) throw InvariantViolation("empty image id");
  if (r.image_id.find_first_of(" \t\r\n") != std::string::npos)
    throw InvariantViolation("image id contains whitespace: '" + r.image_id + "'");
  if (r.orig_width <= 0 || r.orig_height <= 0)
    throw InvariantViolation("record " + r.image_id + " has non-positive dimensions");
  check_annotation_legal(r.d, r.side, r.orig_height);
}

/// Manifest line: `image_id side d0 d1 d2 d3 orig_w orig_h`.
inline std::string to_manifest_line(const AnnotationRecord& r) {
  std::string s = r.image_id;
  s += ' ';
  s += to_string(r.side);
  s += ' ';
  s += to_string(r.d);
  s += ' ' + std::to_string(r.orig_width) + ' ' + std::to_string(r.orig_height);
  return s;
}

inline AnnotationRecord parse_manifest_line(std::string_view line) {
  const auto f = text::split_fields(line);
  if (f.size() != 8) throw ParseError("expected 8 fields, got " + std::to_string(f.size()));
  AnnotationRecord r;
  r.image_id = std::string(f[0]);
  r.side = parse_side(f[1]);
  for (std::size_t i = 0; i < 4; ++i) r.d[i] = text::parse_double(f[2 + i]);
  const auto w = text::parse_int(f[6]);
  const auto h = text::parse_int(f[7]);
  if (w <= 0 || h <= 0 || w > 1'000'000 || h > 1'000'000) throw ParseError("bad image dimensions");
  r.orig_width = static_cast<int>(w);
  r.orig_height = static_cast<int>(h);
  return r;
}

/// Label of `r` expressed at a (width x height) working resolution via S * H * S^-1.
inline DisplacementVector rescale_label(const AnnotationRecord& r, int width, int height) {
  if (width == r.orig_width && height == r.orig_height) return r.d;
  const Homography h = displacement_to_homography(r.d, r.orig_width, r.orig_height);
  const auto s = ScaleTransform::between(r.orig_width, r.orig_height, width, height);
  DisplacementVector out = homography_to_displacement(rescale_homography(h, s), width, height).d;
  // Conjugation keeps untouched corners fixed up to rounding; pin them so the
  // rescaled label still satisfies the side convention exactly.
  for (std::size_t i = 0; i < 4; ++i)
    if (r.d[i] == 0.0) out[i] = 0.0;
  return out;
}

}  // namespace shelfrect
