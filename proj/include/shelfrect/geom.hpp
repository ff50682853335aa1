#pragma once

// Homography algebra for the vertical 4-point parameterization.
//
// Conventions shared by every module:
//   * corners are ordered TL, TR, BR, BL and sit at (0,0), (W,0), (W,H), (0,H);
//   * a displacement is a vertical offset in pixels, positive = downward;
//   * the homography built from a displacement maps distorted-image
//     coordinates onto rectified coordinates (source corner -> displaced corner).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>

#include "shelfrect/error.hpp"
#include "shelfrect/text.hpp"

namespace shelfrect {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

enum Corner : std::size_t { kTopLeft = 0, kTopRight = 1, kBottomRight = 2, kBottomLeft = 3 };

/// Vertical displacement of the four image corners, in pixels.
struct DisplacementVector {
  std::array<double, 4> d{0.0, 0.0, 0.0, 0.0};

  DisplacementVector() = default;
  DisplacementVector(double tl, double tr, double br, double bl) : d{tl, tr, br, bl} {}
  explicit DisplacementVector(const std::array<double, 4>& v) : d(v) {}

  double& operator[](std::size_t i) { return d[i]; }
  double operator[](std::size_t i) const { return d[i]; }

  bool finite() const {
    return std::all_of(d.begin(), d.end(), [](double v) { return std::isfinite(v); });
  }
  DisplacementVector scaled(double s) const { return {d[0] * s, d[1] * s, d[2] * s, d[3] * s}; }

  friend bool operator==(const DisplacementVector&, const DisplacementVector&) = default;
};

inline std::string to_string(const DisplacementVector& v) { return text::join_doubles(v.d); }

inline DisplacementVector parse_displacement(std::string_view s) {
  auto fields = text::split_fields(s, ",");
  if (fields.size() != 4) throw ParseError("displacement needs 4 values, got " + std::to_string(fields.size()));
  DisplacementVector v;
  for (std::size_t i = 0; i < 4; ++i) v[i] = text::parse_double(fields[i]);
  return v;
}

using Mat3 = std::array<double, 9>;  // row-major

namespace mat3 {

inline constexpr Mat3 identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

inline Mat3 multiply(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[3 * i + k] * b[3 * k + j];
      c[3 * i + j] = s;
    }
  return c;
}

inline Mat3 transpose(const Mat3& a) { return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]}; }

inline double determinant(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

/// Plain inverse via the adjugate. Throws SingularSystem when |det| <= 1e-12.
inline Mat3 inverse(const Mat3& m) {
  const double det = determinant(m);
  if (!(std::abs(det) > 1e-12)) throw SingularSystem("3x3 matrix is not invertible");
  const double inv = 1.0 / det;
  return {(m[4] * m[8] - m[5] * m[7]) * inv, (m[2] * m[7] - m[1] * m[8]) * inv, (m[1] * m[5] - m[2] * m[4]) * inv,
          (m[5] * m[6] - m[3] * m[8]) * inv, (m[0] * m[8] - m[2] * m[6]) * inv, (m[2] * m[3] - m[0] * m[5]) * inv,
          (m[3] * m[7] - m[4] * m[6]) * inv, (m[1] * m[6] - m[0] * m[7]) * inv, (m[0] * m[4] - m[1] * m[3]) * inv};
}

}  // namespace mat3

/// Solves A x = b (N x N, row-major) by Gaussian elimination with partial pivoting.
/// A pivot below 1e-12 of the largest matrix entry is treated as rank deficiency.
template <std::size_t N>
std::array<double, N> solve_linear(std::array<double, N * N> a, std::array<double, N> b) {
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  if (!(scale > 0.0)) throw SingularSystem("zero matrix");
  const double tiny = 1e-12 * scale;

  for (std::size_t col = 0; col < N; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < N; ++r)
      if (std::abs(a[r * N + col]) > std::abs(a[pivot * N + col])) pivot = r;
    if (!(std::abs(a[pivot * N + col]) > tiny)) throw SingularSystem("rank-deficient linear system");
    if (pivot != col) {
      for (std::size_t c = 0; c < N; ++c) std::swap(a[col * N + c], a[pivot * N + c]);
      std::swap(b[col], b[pivot]);
    }
    for (std::size_t r = col + 1; r < N; ++r) {
      const double f = a[r * N + col] / a[col * N + col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < N; ++c) a[r * N + c] -= f * a[col * N + c];
      b[r] -= f * b[col];
    }
  }
  std::array<double, N> x{};
  for (std::size_t i = N; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < N; ++c) s -= a[i * N + c] * x[c];
    x[i] = s / a[i * N + i];
  }
  return x;
}

/// 3x3 projective transform, canonicalized so that h22 == 1.
class Homography {
 public:
  Homography() : m_(mat3::identity()) {}

  /// Canonicalizes `m` and checks invertibility.
  static Homography from_matrix(const Mat3& m) {
    if (!(std::abs(m[8]) >= 1e-12)) throw SingularSystem("h22 vanishes; cannot canonicalize");
    Mat3 c = m;
    const double s = 1.0 / m[8];
    for (auto& v : c) v *= s;
    c[8] = 1.0;
    for (double v : c)
      if (!std::isfinite(v)) throw SingularSystem("non-finite homography entry");
    if (!(std::abs(mat3::determinant(c)) > 1e-12)) throw SingularSystem("homography determinant too small");
    return Homography(c);
  }

  static Homography translation(double tx, double ty) { return Homography({1, 0, tx, 0, 1, ty, 0, 0, 1}); }
  static Homography scaling(double sx, double sy) { return from_matrix({sx, 0, 0, 0, sy, 0, 0, 0, 1}); }

  const Mat3& matrix() const { return m_; }
  double operator()(int row, int col) const { return m_[3 * row + col]; }

  friend bool operator==(const Homography&, const Homography&) = default;

 private:
  explicit Homography(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

inline std::string to_string(const Homography& h) { return text::join_doubles(h.matrix()); }

inline Homography parse_homography(std::string_view s) {
  auto fields = text::split_fields(s, ",");
  if (fields.size() != 9) throw ParseError("homography needs 9 values, got " + std::to_string(fields.size()));
  Mat3 m{};
  for (std::size_t i = 0; i < 9; ++i) m[i] = text::parse_double(fields[i]);
  return Homography::from_matrix(m);
}

/// Projective action on a point with perspective division.
inline Point apply(const Mat3& m, Point p) {
  const double w = m[6] * p.x + m[7] * p.y + m[8];
  if (!(std::abs(w) >= 1e-12)) throw AtInfinity("point maps to infinity");
  return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
}
inline Point apply(const Homography& h, Point p) { return apply(h.matrix(), p); }

inline Homography invert(const Homography& h) { return Homography::from_matrix(mat3::inverse(h.matrix())); }

/// a after b: compose(a, b)(p) == a(b(p)).
inline Homography compose(const Homography& a, const Homography& b) {
  return Homography::from_matrix(mat3::multiply(a.matrix(), b.matrix()));
}

/// Anisotropic resolution change, (W_orig, H_orig) -> (W_new, H_new).
struct ScaleTransform {
  double sx = 1.0;
  double sy = 1.0;

  ScaleTransform() = default;
  ScaleTransform(double sx_, double sy_) : sx(sx_), sy(sy_) {
    if (!(sx > 0.0 && sy > 0.0 && std::isfinite(sx) && std::isfinite(sy)))
      throw OutOfRange("scale factors must be positive and finite");
  }
  static ScaleTransform between(double w_orig, double h_orig, double w_new, double h_new) {
    return {w_new / w_orig, h_new / h_orig};
  }
  Mat3 matrix() const { return {sx, 0, 0, 0, sy, 0, 0, 0, 1}; }
  Mat3 inverse_matrix() const { return {1.0 / sx, 0, 0, 0, 1.0 / sy, 0, 0, 0, 1}; }
};

/// S * H * S^-1: the same warp expressed in resized image coordinates.
inline Homography rescale_homography(const Homography& h, const ScaleTransform& s) {
  return Homography::from_matrix(mat3::multiply(mat3::multiply(s.matrix(), h.matrix()), s.inverse_matrix()));
}

/// Four corner correspondences' worth of points plus the frame they live in.
struct CornerSet {
  std::array<Point, 4> pts{};
  double width = 0.0;
  double height = 0.0;

  CornerSet() = default;
  CornerSet(double w, double h) : pts{Point{0, 0}, Point{w, 0}, Point{w, h}, Point{0, h}}, width(w), height(h) {
    if (!(w > 0.0 && h > 0.0)) throw OutOfRange("image dimensions must be positive");
  }

  CornerSet displaced(const DisplacementVector& d) const {
    CornerSet c = *this;
    for (std::size_t i = 0; i < 4; ++i) c.pts[i].y += d[i];
    return c;
  }

  /// True when some three of the four points are collinear (relative to the frame area).
  bool has_collinear_triple() const {
    const double tol = 1e-9 * std::max(1.0, width * height);
    for (std::size_t skip = 0; skip < 4; ++skip) {
      std::array<Point, 3> t{};
      std::size_t k = 0;
      for (std::size_t i = 0; i < 4; ++i)
        if (i != skip) t[k++] = pts[i];
      const double cross = (t[1].x - t[0].x) * (t[2].y - t[0].y) - (t[1].y - t[0].y) * (t[2].x - t[0].x);
      if (std::abs(cross) <= tol) return true;
    }
    return false;
  }
};

namespace detail {

struct DltSystem {
  std::array<double, 64> a{};
  std::array<double, 8> b{};
};

// Unknowns h0..h7 with h8 fixed to 1.
inline DltSystem build_dlt(const CornerSet& src, const CornerSet& dst) {
  DltSystem s;
  for (std::size_t i = 0; i < 4; ++i) {
    const double x = src.pts[i].x, y = src.pts[i].y;
    const double X = dst.pts[i].x, Y = dst.pts[i].y;
    double* rx = &s.a[(2 * i) * 8];
    double* ry = &s.a[(2 * i + 1) * 8];
    rx[0] = x; rx[1] = y; rx[2] = 1; rx[3] = 0; rx[4] = 0; rx[5] = 0; rx[6] = -x * X; rx[7] = -y * X;
    ry[0] = 0; ry[1] = 0; ry[2] = 0; ry[3] = x; ry[4] = y; ry[5] = 1; ry[6] = -x * Y; ry[7] = -y * Y;
    s.b[2 * i] = X;
    s.b[2 * i + 1] = Y;
  }
  return s;
}

inline Mat3 unpack(const std::array<double, 8>& h) { return {h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0}; }

}  // namespace detail

/// Exact homography taking the 4 `src` points onto the 4 `dst` points.
inline Homography homography_from_correspondences(const CornerSet& src, const CornerSet& dst) {
  if (src.has_collinear_triple() || dst.has_collinear_triple())
    throw SingularSystem("three corners are collinear");
  const auto sys = detail::build_dlt(src, dst);
  return Homography::from_matrix(detail::unpack(solve_linear<8>(sys.a, sys.b)));
}

inline Homography displacement_to_homography(const DisplacementVector& d, double width, double height) {
  if (!d.finite()) throw InvariantViolation("displacement has non-finite values");
  const CornerSet src(width, height);
  return homography_from_correspondences(src, src.displaced(d));
}

struct DecodedDisplacement {
  DisplacementVector d;
  bool lossy = false;  // H also moved some corner horizontally
};

inline DecodedDisplacement homography_to_displacement(const Homography& h, double width, double height) {
  const CornerSet src(width, height);
  DecodedDisplacement out;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point q = apply(h, src.pts[i]);
    out.d[i] = q.y - src.pts[i].y;
    if (std::abs(q.x - src.pts[i].x) > 1e-6) out.lossy = true;
  }
  return out;
}

/// Vector-Jacobian product of displacement_to_homography: given dL/dH (3x3,
/// the h22 entry is ignored since it is pinned to 1) returns dL/dd.
/// Uses the adjoint of the 8x8 DLT solve: lambda = A^-T g, dL/dd_i = lambda_{2i+1} * w_i,
/// with w_i the projective denominator of corner i.
inline std::array<double, 4> displacement_to_homography_vjp(const DisplacementVector& d, double width, double height,
                                                            const Mat3& grad_h) {
  const CornerSet src(width, height);
  const CornerSet dst = src.displaced(d);
  if (dst.has_collinear_triple()) throw SingularSystem("three corners are collinear");
  const auto sys = detail::build_dlt(src, dst);
  const auto h = solve_linear<8>(sys.a, sys.b);

  std::array<double, 64> at{};
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) at[c * 8 + r] = sys.a[r * 8 + c];
  std::array<double, 8> g{};
  std::copy_n(grad_h.begin(), 8, g.begin());
  const auto lambda = solve_linear<8>(at, g);

  std::array<double, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    const double w = 1.0 + src.pts[i].x * h[6] + src.pts[i].y * h[7];
    out[i] = lambda[2 * i + 1] * w;
  }
  return out;
}

}  // namespace shelfrect
