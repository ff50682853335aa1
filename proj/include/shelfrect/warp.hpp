#pragma once

// Inverse-mapped bilinear warping, the masked photometric distance and its
// gradient with respect to the 4 corner displacements.

#include <array>
#include <cmath>
#include <vector>

#include "shelfrect/error.hpp"
#include "shelfrect/geom.hpp"
#include "shelfrect/image.hpp"
#include "shelfrect/record.hpp"

namespace shelfrect {

struct WarpResult {
  ImageBuffer image;
  ValidityMask mask;
};

namespace detail {

struct BilinearSite {
  bool valid = false;
  double u = 0.0, v = 0.0;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double fx = 0.0, fy = 0.0;
};

// Output pixel (x, y) samples the source at inverse * (x, y, 1).
inline BilinearSite locate(const Mat3& inverse, int x, int y, int src_w, int src_h) {
  BilinearSite s;
  const double w = inverse[6] * x + inverse[7] * y + inverse[8];
  if (!(std::abs(w) >= 1e-12)) return s;
  s.u = (inverse[0] * x + inverse[1] * y + inverse[2]) / w;
  s.v = (inverse[3] * x + inverse[4] * y + inverse[5]) / w;
  if (!(s.u >= 0.0 && s.u <= src_w - 1.0 && s.v >= 0.0 && s.v <= src_h - 1.0)) return s;
  s.valid = true;
  s.x0 = static_cast<int>(s.u);
  s.y0 = static_cast<int>(s.v);
  s.fx = s.u - s.x0;
  s.fy = s.v - s.y0;
  s.x1 = std::min(s.x0 + 1, src_w - 1);
  s.y1 = std::min(s.y0 + 1, src_h - 1);
  return s;
}

}  // namespace detail

/// Warps `src` using an explicit inverse map (output -> source coordinates).
/// Rows are computed independently of each other.
inline WarpResult warp_with_inverse(const ImageBuffer& src, const Mat3& inverse, int out_width, int out_height) {
  WarpResult r{ImageBuffer(out_width, out_height, src.channels()), ValidityMask(out_width, out_height, false)};
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const auto s = detail::locate(inverse, x, y, src.width(), src.height());
      if (!s.valid) continue;
      r.mask.set(y, x, true);
      for (int c = 0; c < src.channels(); ++c) {
        const double top = src.at(c, s.y0, s.x0) * (1.0 - s.fx) + src.at(c, s.y0, s.x1) * s.fx;
        const double bot = src.at(c, s.y1, s.x0) * (1.0 - s.fx) + src.at(c, s.y1, s.x1) * s.fx;
        r.image.at(c, y, x) = std::clamp(top * (1.0 - s.fy) + bot * s.fy, 0.0, 1.0);
      }
    }
  }
  return r;
}

/// Like warp_with_inverse, but an output pixel is valid only when every bilinear
/// tap it reads is valid in `src.mask`, so zero fill never leaks into valid pixels.
inline WarpResult warp_masked(const WarpResult& src, const Mat3& inverse, int out_width, int out_height) {
  WarpResult r = warp_with_inverse(src.image, inverse, out_width, out_height);
  for (int y = 0; y < out_height; ++y)
    for (int x = 0; x < out_width; ++x) {
      if (!r.mask.valid(y, x)) continue;
      const auto s = detail::locate(inverse, x, y, src.image.width(), src.image.height());
      const bool ok = src.mask.valid(s.y0, s.x0) && src.mask.valid(s.y0, s.x1) && src.mask.valid(s.y1, s.x0) &&
                      src.mask.valid(s.y1, s.x1);
      if (!ok) {
        r.mask.set(y, x, false);
        for (int c = 0; c < r.image.channels(); ++c) r.image.at(c, y, x) = 0.0;
      }
    }
  return r;
}

/// Output pixel p takes src at H^-1 p; samples outside the source are 0 and masked invalid.
inline WarpResult warp_image(const ImageBuffer& src, const Homography& h, int out_width, int out_height) {
  return warp_with_inverse(src, invert(h).matrix(), out_width, out_height);
}

inline WarpResult warp_image(const ImageBuffer& src, const Homography& h) {
  return warp_image(src, h, src.width(), src.height());
}

/// Rectifies an image with its own ground truth. The label is rescaled when the
/// image is not at the record's original resolution.
inline WarpResult unwarp_to_fronto_parallel(const ImageBuffer& img, const AnnotationRecord& record) {
  const DisplacementVector d = rescale_label(record, img.width(), img.height());
  return warp_image(img, displacement_to_homography(d, img.width(), img.height()));
}

/// Mean of |a - b| over masked pixels and all channels.
inline double photometric_l1(const ImageBuffer& a, const ImageBuffer& b, const ValidityMask& mask) {
  if (!a.same_shape(b)) throw ShapeMismatch("photometric operands differ in shape");
  if (mask.width() != a.width() || mask.height() != a.height()) throw ShapeMismatch("mask does not match image");
  const std::size_t n = mask.count();
  if (n == 0) throw EmptyMask("no valid pixels to compare");
  double sum = 0.0;
  for (int c = 0; c < a.channels(); ++c)
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x)
        if (mask.valid(y, x)) sum += std::abs(a.at(c, y, x) - b.at(c, y, x));
  return sum / static_cast<double>(n * static_cast<std::size_t>(a.channels()));
}

/// Gradient of the source-space sample locations, contracted with an upstream
/// per-pixel gradient, pulled back to dL/dH for the warp `warp_image(src, H)`.
/// `upstream` has the output image's planar layout; invalid pixels contribute nothing.
inline Mat3 warp_gradient_wrt_homography(const ImageBuffer& src, const Homography& h,
                                         const std::vector<double>& upstream) {
  const int w = src.width(), ht = src.height(), ch = src.channels();
  if (upstream.size() != static_cast<std::size_t>(w) * ht * ch) throw ShapeMismatch("upstream gradient size");
  const Mat3 canonical = invert(h).matrix();
  const Mat3 raw = mat3::inverse(h.matrix());
  const std::size_t plane = static_cast<std::size_t>(w) * ht;

  Mat3 g_inv{};
  for (int y = 0; y < ht; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto s = detail::locate(canonical, x, y, w, ht);
      if (!s.valid) continue;
      double gu = 0.0, gv = 0.0;
      const std::size_t idx = static_cast<std::size_t>(y) * w + x;
      for (int c = 0; c < ch; ++c) {
        const double up = upstream[c * plane + idx];
        if (up == 0.0) continue;
        const double i00 = src.at(c, s.y0, s.x0), i01 = src.at(c, s.y0, s.x1);
        const double i10 = src.at(c, s.y1, s.x0), i11 = src.at(c, s.y1, s.x1);
        gu += up * ((1.0 - s.fy) * (i01 - i00) + s.fy * (i11 - i10));
        gv += up * ((1.0 - s.fx) * (i10 - i00) + s.fx * (i11 - i01));
      }
      if (gu == 0.0 && gv == 0.0) continue;
      // u = (m0 . p) / (m2 . p), v = (m1 . p) / (m2 . p) with the un-normalized inverse.
      const double q2 = raw[6] * x + raw[7] * y + raw[8];
      const double p[3] = {static_cast<double>(x), static_cast<double>(y), 1.0};
      const double a = gu / q2, b = gv / q2, c2 = -(gu * s.u + gv * s.v) / q2;
      for (int j = 0; j < 3; ++j) {
        g_inv[j] += a * p[j];
        g_inv[3 + j] += b * p[j];
        g_inv[6 + j] += c2 * p[j];
      }
    }
  }
  // d(H^-1) = -H^-1 dH H^-1  =>  dL/dH = -(H^-1)^T G (H^-1)^T
  const Mat3 rt = mat3::transpose(raw);
  Mat3 g_h = mat3::multiply(mat3::multiply(rt, g_inv), rt);
  for (auto& v : g_h) v = -v;
  return g_h;
}

/// Gradient of sum(upstream * warp_image(src, H(d))) with respect to d.
inline std::array<double, 4> warp_gradient(const ImageBuffer& src, const DisplacementVector& d,
                                           const std::vector<double>& upstream) {
  const Homography h = displacement_to_homography(d, src.width(), src.height());
  const Mat3 g_h = warp_gradient_wrt_homography(src, h, upstream);
  return displacement_to_homography_vjp(d, src.width(), src.height(), g_h);
}

}  // namespace shelfrect
