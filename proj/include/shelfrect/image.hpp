#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "shelfrect/error.hpp"

namespace shelfrect {

/// Planar row-major raster, intensities in [0, 1]. Index (c, y, x) -> (c*H + y)*W + x.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int width, int height, int channels, double fill = 0.0)
      : width_(width), height_(height), channels_(channels) {
    if (width <= 0 || height <= 0) throw ShapeMismatch("image dimensions must be positive");
    if (channels != 1 && channels != 3) throw ShapeMismatch("channels must be 1 or 3");
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }
  ImageBuffer(int width, int height, int channels, std::vector<double> data)
      : ImageBuffer(width, height, channels) {
    if (data.size() != data_.size()) throw ShapeMismatch("pixel buffer length does not match dimensions");
    for (double v : data)
      if (!(v >= 0.0 && v <= 1.0)) throw OutOfRange("intensity outside [0,1]");
    data_ = std::move(data);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  double at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }

  const double* plane(int c) const { return data_.data() + static_cast<std::size_t>(c) * plane_size(); }
  double* plane(int c) { return data_.data() + static_cast<std::size_t>(c) * plane_size(); }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool same_shape(const ImageBuffer& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive
};

/// Marks output pixels whose inverse-mapped sample landed inside the source.
class ValidityMask {
 public:
  ValidityMask() = default;
  ValidityMask(int width, int height, bool value = true)
      : width_(width), height_(height), bits_(static_cast<std::size_t>(width) * height, value ? 1 : 0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  bool valid(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool v) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  std::size_t count() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)); }
  bool all_valid() const { return count() == bits_.size(); }

  ValidityMask operator&(const ValidityMask& o) const {
    if (o.width_ != width_ || o.height_ != height_) throw ShapeMismatch("mask dimensions differ");
    ValidityMask m = *this;
    for (std::size_t i = 0; i < bits_.size(); ++i) m.bits_[i] = bits_[i] & o.bits_[i];
    return m;
  }

  std::optional<BoundingBox> bounding_box() const {
    std::optional<BoundingBox> box;
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) {
        if (!valid(y, x)) continue;
        if (!box) {
          box = BoundingBox{x, y, x, y};
        } else {
          box->x0 = std::min(box->x0, x);
          box->x1 = std::max(box->x1, x);
          box->y0 = std::min(box->y0, y);
          box->y1 = std::max(box->y1, y);
        }
      }
    return box;
  }

  friend bool operator==(const ValidityMask&, const ValidityMask&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline ImageBuffer to_grayscale(const ImageBuffer& img) {
  if (img.channels() == 1) return img;
  ImageBuffer out(img.width(), img.height(), 1);
  const double* r = img.plane(0);
  const double* g = img.plane(1);
  const double* b = img.plane(2);
  double* o = out.plane(0);
  for (std::size_t i = 0; i < img.plane_size(); ++i)
    o[i] = std::clamp(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i], 0.0, 1.0);
  return out;
}

inline ImageBuffer to_rgb(const ImageBuffer& img) {
  if (img.channels() == 3) return img;
  ImageBuffer out(img.width(), img.height(), 3);
  for (int c = 0; c < 3; ++c) std::copy_n(img.plane(0), img.plane_size(), out.plane(c));
  return out;
}

inline ImageBuffer with_channels(const ImageBuffer& img, int channels) {
  return channels == 1 ? to_grayscale(img) : to_rgb(img);
}

/// Bilinear resize with pixel-centre alignment and edge clamping.
inline ImageBuffer resize_bilinear(const ImageBuffer& src, int width, int height) {
  if (width <= 0 || height <= 0) throw OutOfRange("resize target must be positive");
  if (width == src.width() && height == src.height()) return src;
  ImageBuffer out(width, height, src.channels());
  const double fx = static_cast<double>(src.width()) / width;
  const double fy = static_cast<double>(src.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double v = std::clamp((y + 0.5) * fy - 0.5, 0.0, src.height() - 1.0);
    const int y0 = static_cast<int>(v);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double wy = v - y0;
    for (int x = 0; x < width; ++x) {
      const double u = std::clamp((x + 0.5) * fx - 0.5, 0.0, src.width() - 1.0);
      const int x0 = static_cast<int>(u);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double wx = u - x0;
      for (int c = 0; c < src.channels(); ++c) {
        const double top = src.at(c, y0, x0) * (1 - wx) + src.at(c, y0, x1) * wx;
        const double bot = src.at(c, y1, x0) * (1 - wx) + src.at(c, y1, x1) * wx;
        out.at(c, y, x) = std::clamp(top * (1 - wy) + bot * wy, 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace shelfrect
