#pragma once

// Displacement regressor: a plain strided convnet ([3x3 conv stride 2, bias,
// GELU] per block, zero padding 1), global average pooling and a linear head,
// with hand-written reverse mode through the losses, the DLT and the warp.
//
// Parameter count for widths w_1..w_L on c input channels and k outputs:
//   sum_l (9 * w_{l-1} * w_l + w_l) + k * w_L + k,  with w_0 = c.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "shelfrect/dataset.hpp"
#include "shelfrect/error.hpp"
#include "shelfrect/geom.hpp"
#include "shelfrect/image.hpp"
#include "shelfrect/record.hpp"
#include "shelfrect/rng.hpp"
#include "shelfrect/text.hpp"
#include "shelfrect/warp.hpp"

namespace shelfrect {

enum class Head { four_point, three_point };

inline std::string_view to_string(Head h) { return h == Head::four_point ? "four" : "three"; }

inline Head parse_head(std::string_view s) {
  if (s == "four" || s == "4" || s == "four_point") return Head::four_point;
  if (s == "three" || s == "3" || s == "three_point") return Head::three_point;
  throw ParseError("unknown head '" + std::string(s) + "' (expected four or three)");
}

struct ModelConfig {
  int input_size = 224;
  int channels = 3;
  std::vector<int> widths{16, 32, 64, 96};
  Head head = Head::four_point;
  double lambda = 1.0;       // photometric weight
  bool normalize = true;     // regress 2d/h rather than pixels
  double side_weight = 1.0;  // 3-point classification term

  int output_dim() const { return head == Head::four_point ? 4 : 3; }

  void check() const {
    if (input_size < 2) throw OutOfRange("input size must be at least 2");
    if (channels != 1 && channels != 3) throw OutOfRange("channels must be 1 or 3");
    if (widths.empty()) throw OutOfRange("backbone needs at least one block");
    for (int w : widths)
      if (w <= 0) throw OutOfRange("block widths must be positive");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw OutOfRange("photometric weight must be >= 0");
    if (!(side_weight >= 0.0) || !std::isfinite(side_weight)) throw OutOfRange("side weight must be >= 0");
  }

  /// Architecture identity stored in checkpoints. Loss weights are not part of it.
  std::string fingerprint() const {
    std::string widths_s;
    for (std::size_t i = 0; i < widths.size(); ++i) widths_s += (i ? "," : "") + std::to_string(widths[i]);
    return "convnet in=" + std::to_string(input_size) + " ch=" + std::to_string(channels) + " widths=" + widths_s +
           " head=" + std::string(to_string(head)) + " norm=" + (normalize ? "1" : "0");
  }

  static ModelConfig from_fingerprint(std::string_view fp) {
    const auto f = text::split_fields(fp);
    if (f.size() != 6 || f[0] != "convnet") throw ParseError("unrecognised model fingerprint '" + std::string(fp) + "'");
    auto value = [&](std::size_t i, std::string_view key) {
      if (f[i].substr(0, key.size()) != key) throw ParseError("fingerprint field " + std::string(key) + " missing");
      return f[i].substr(key.size());
    };
    ModelConfig c;
    c.input_size = static_cast<int>(text::parse_int(value(1, "in=")));
    c.channels = static_cast<int>(text::parse_int(value(2, "ch=")));
    c.widths.clear();
    for (auto w : text::split_fields(value(3, "widths="), ",")) c.widths.push_back(static_cast<int>(text::parse_int(w)));
    c.head = parse_head(value(4, "head="));
    c.normalize = value(5, "norm=") == "1";
    c.check();
    return c;
  }
};

/// Spatial size after a 3x3 stride-2 convolution with padding 1.
inline int conv_out_size(int n) { return (n - 1) / 2 + 1; }

struct ConvShape {
  int cin = 0, cout = 0, in = 0, out = 0;
  std::size_t weight = 0, bias = 0;  // offsets into the parameter vector
};

struct Layout {
  std::vector<ConvShape> conv;
  std::size_t head_weight = 0, head_bias = 0, total = 0;
  int features = 0, outputs = 0;
};

inline Layout layout_of(const ModelConfig& cfg) {
  cfg.check();
  Layout l;
  std::size_t off = 0;
  int cin = cfg.channels, n = cfg.input_size;
  for (int w : cfg.widths) {
    ConvShape s{cin, w, n, conv_out_size(n), off, 0};
    off += static_cast<std::size_t>(9) * cin * w;
    s.bias = off;
    off += static_cast<std::size_t>(w);
    l.conv.push_back(s);
    cin = w;
    n = s.out;
  }
  l.features = cin;
  l.outputs = cfg.output_dim();
  l.head_weight = off;
  off += static_cast<std::size_t>(l.outputs) * l.features;
  l.head_bias = off;
  off += static_cast<std::size_t>(l.outputs);
  l.total = off;
  return l;
}

inline std::size_t param_count(const ModelConfig& cfg) { return layout_of(cfg).total; }

struct ModelParams {
  std::string fingerprint;
  std::vector<double> values;
};

/// He-normal convolution weights, small head weights, zero biases.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  const Layout l = layout_of(cfg);
  ModelParams p{cfg.fingerprint(), std::vector<double>(l.total, 0.0)};
  Rng rng(derive_seed(seed, {0x1a17}));
  for (const auto& c : l.conv) {
    std::normal_distribution<double> n(0.0, std::sqrt(2.0 / (9.0 * c.cin)));
    for (std::size_t i = 0; i < static_cast<std::size_t>(9) * c.cin * c.cout; ++i) p.values[c.weight + i] = n(rng);
  }
  std::normal_distribution<double> n(0.0, 0.1 / std::sqrt(static_cast<double>(l.features)));
  for (std::size_t i = 0; i < static_cast<std::size_t>(l.outputs) * l.features; ++i) p.values[l.head_weight + i] = n(rng);
  return p;
}

inline ModelParams zero_params(const ModelConfig& cfg) {
  return {cfg.fingerprint(), std::vector<double>(param_count(cfg), 0.0)};
}

inline void check_params(const ModelParams& p, const ModelConfig& cfg) {
  if (p.fingerprint != cfg.fingerprint())
    throw ShapeMismatch("parameters are for '" + p.fingerprint + "', model is '" + cfg.fingerprint() + "'");
  if (p.values.size() != param_count(cfg)) throw ShapeMismatch("parameter vector has the wrong length");
}

namespace detail {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865476)); }

inline double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * 0.7071067811865476)) + x * 0.3989422804014327 * std::exp(-0.5 * x * x);
}

// col[(ci*9 + ky*3 + kx) * out^2 + oy*out + ox] = x[ci][2oy+ky-1][2ox+kx-1] (0 outside).
inline void im2col(const double* x, const ConvShape& s, std::vector<double>& col) {
  const int n = s.in, m = s.out;
  const std::size_t mm = static_cast<std::size_t>(m) * m;
  col.assign(static_cast<std::size_t>(s.cin) * 9 * mm, 0.0);
  for (int ci = 0; ci < s.cin; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        double* row = col.data() + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * mm;
        for (int oy = 0; oy < m; ++oy) {
          const int iy = 2 * oy + ky - 1;
          if (iy < 0 || iy >= n) continue;
          const double* src = x + (static_cast<std::size_t>(ci) * n + iy) * n;
          for (int ox = 0; ox < m; ++ox) {
            const int ix = 2 * ox + kx - 1;
            if (ix >= 0 && ix < n) row[oy * m + ox] = src[ix];
          }
        }
      }
}

inline void col2im_add(const std::vector<double>& dcol, const ConvShape& s, double* dx) {
  const int n = s.in, m = s.out;
  const std::size_t mm = static_cast<std::size_t>(m) * m;
  for (int ci = 0; ci < s.cin; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = dcol.data() + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * mm;
        for (int oy = 0; oy < m; ++oy) {
          const int iy = 2 * oy + ky - 1;
          if (iy < 0 || iy >= n) continue;
          double* dst = dx + (static_cast<std::size_t>(ci) * n + iy) * n;
          for (int ox = 0; ox < m; ++ox) {
            const int ix = 2 * ox + kx - 1;
            if (ix >= 0 && ix < n) dst[ix] += row[oy * m + ox];
          }
        }
      }
}

}  // namespace detail

/// Intermediate values kept for the backward pass.
struct Activations {
  std::vector<std::vector<double>> cols;  // im2col of each block input
  std::vector<std::vector<double>> pre;   // pre-activation of each block
  std::vector<double> pooled;
  std::vector<double> output;
};

/// Raw network outputs. The network sees the image shifted to [-0.5, 0.5].
inline Activations forward_cached(const ModelParams& params, const ModelConfig& cfg, const ImageBuffer& img) {
  check_params(params, cfg);
  if (img.width() != cfg.input_size || img.height() != cfg.input_size || img.channels() != cfg.channels)
    throw ShapeMismatch("model expects " + std::to_string(cfg.input_size) + "x" + std::to_string(cfg.input_size) + "x" +
                        std::to_string(cfg.channels) + ", got " + std::to_string(img.width()) + "x" +
                        std::to_string(img.height()) + "x" + std::to_string(img.channels()));
  const Layout l = layout_of(cfg);
  const double* p = params.values.data();
  Activations a;
  std::vector<double> x(img.data().begin(), img.data().end());
  for (auto& v : x) v -= 0.5;
  for (const auto& s : l.conv) {
    a.cols.emplace_back();
    detail::im2col(x.data(), s, a.cols.back());
    const auto& col = a.cols.back();
    const std::size_t mm = static_cast<std::size_t>(s.out) * s.out;
    const std::size_t k = static_cast<std::size_t>(s.cin) * 9;
    std::vector<double> pre(static_cast<std::size_t>(s.cout) * mm);
    for (int co = 0; co < s.cout; ++co) {
      double* out = pre.data() + co * mm;
      std::fill(out, out + mm, p[s.bias + co]);
      const double* w = p + s.weight + co * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double wv = w[kk];
        if (wv == 0.0) continue;
        const double* c = col.data() + kk * mm;
        for (std::size_t j = 0; j < mm; ++j) out[j] += wv * c[j];
      }
    }
    x.resize(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) x[i] = detail::gelu(pre[i]);
    a.pre.push_back(std::move(pre));
  }
  const int m = l.conv.back().out;
  const std::size_t mm = static_cast<std::size_t>(m) * m;
  a.pooled.assign(l.features, 0.0);
  for (int c = 0; c < l.features; ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < mm; ++j) s += x[c * mm + j];
    a.pooled[c] = s / static_cast<double>(mm);
  }
  a.output.assign(l.outputs, 0.0);
  for (int o = 0; o < l.outputs; ++o) {
    double s = p[l.head_bias + o];
    for (int c = 0; c < l.features; ++c) s += p[l.head_weight + o * l.features + c] * a.pooled[c];
    a.output[o] = s;
  }
  return a;
}

inline std::vector<double> forward(const ModelParams& params, const ModelConfig& cfg, const ImageBuffer& img) {
  return forward_cached(params, cfg, img).output;
}

/// Accumulates dL/dparams into `grad` given dL/doutput.
inline void backward(const ModelParams& params, const ModelConfig& cfg, const Activations& a,
                     std::span<const double> d_output, std::vector<double>& grad) {
  const Layout l = layout_of(cfg);
  if (grad.size() != l.total) grad.assign(l.total, 0.0);
  const double* p = params.values.data();
  double* g = grad.data();

  std::vector<double> d_pooled(l.features, 0.0);
  for (int o = 0; o < l.outputs; ++o) {
    const double up = d_output[o];
    g[l.head_bias + o] += up;
    for (int c = 0; c < l.features; ++c) {
      g[l.head_weight + o * l.features + c] += up * a.pooled[c];
      d_pooled[c] += up * p[l.head_weight + o * l.features + c];
    }
  }

  const auto& last = l.conv.back();
  std::size_t mm = static_cast<std::size_t>(last.out) * last.out;
  std::vector<double> d_act(static_cast<std::size_t>(l.features) * mm);
  for (int c = 0; c < l.features; ++c)
    std::fill_n(d_act.begin() + c * mm, mm, d_pooled[c] / static_cast<double>(mm));

  std::vector<double> d_pre, d_col;
  for (std::size_t b = l.conv.size(); b-- > 0;) {
    const auto& s = l.conv[b];
    mm = static_cast<std::size_t>(s.out) * s.out;
    const std::size_t k = static_cast<std::size_t>(s.cin) * 9;
    const auto& pre = a.pre[b];
    const auto& col = a.cols[b];
    d_pre.resize(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) d_pre[i] = d_act[i] * detail::gelu_grad(pre[i]);

    for (int co = 0; co < s.cout; ++co) {
      const double* dp = d_pre.data() + co * mm;
      double sb = 0.0;
      for (std::size_t j = 0; j < mm; ++j) sb += dp[j];
      g[s.bias + co] += sb;
      double* gw = g + s.weight + co * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double* c = col.data() + kk * mm;
        double sw = 0.0;
        for (std::size_t j = 0; j < mm; ++j) sw += dp[j] * c[j];
        gw[kk] += sw;
      }
    }
    if (b == 0) break;
    d_col.assign(k * mm, 0.0);
    for (int co = 0; co < s.cout; ++co) {
      const double* dp = d_pre.data() + co * mm;
      const double* w = p + s.weight + co * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double wv = w[kk];
        if (wv == 0.0) continue;
        double* dc = d_col.data() + kk * mm;
        for (std::size_t j = 0; j < mm; ++j) dc[j] += wv * dp[j];
      }
    }
    d_act.assign(static_cast<std::size_t>(s.cin) * s.in * s.in, 0.0);
    detail::col2im_add(d_col, s, d_act.data());
  }
}

/// d / (h/2): maps +-h/2 onto +-1.
inline std::array<double, 4> normalize_targets(const DisplacementVector& d, double height) {
  if (!(height > 0.0)) throw OutOfRange("height must be positive");
  const double half = height / 2.0;
  std::array<double, 4> n{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!(std::abs(d[i]) <= half))
      throw OutOfRange("displacement " + text::format_double(d[i]) + " exceeds half the height");
    n[i] = d[i] / half;
  }
  return n;
}

inline DisplacementVector denormalize(const std::array<double, 4>& n, double height) {
  if (!(height > 0.0)) throw OutOfRange("height must be positive");
  const double half = height / 2.0;
  DisplacementVector d;
  for (std::size_t i = 0; i < 4; ++i) d[i] = n[i] * half;
  return d;
}

/// Mean squared error over the four corners.
inline double corner_loss(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size() || pred.empty()) throw ShapeMismatch("corner loss operands differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - gt[i]) * (pred[i] - gt[i]);
  return s / static_cast<double>(pred.size());
}

/// Side implied by a one-sided label; an all-zero label counts as left.
inline Side label_side(const DisplacementVector& d) {
  return (d[kTopRight] != 0.0 || d[kBottomRight] != 0.0) ? Side::right : Side::left;
}

/// Raw 3-point output (side_logit, v0, v1) -> displacement; v0 is the top corner.
inline DisplacementVector decode_three_point(std::span<const double> raw, double scale) {
  if (raw.size() != 3) throw ShapeMismatch("3-point output must have 3 values");
  const Side side = raw[0] > 0.0 ? Side::right : Side::left;
  const auto corners = side_corners(side);
  DisplacementVector d;
  d[corners[0]] = raw[1] * scale;
  d[corners[1]] = raw[2] * scale;
  return d;
}

/// Binary cross-entropy on the side logit plus mean squared error of the two
/// values against the true side's corners (target units). Returns the loss and
/// fills dL/draw.
inline double three_point_loss(std::span<const double> raw, const std::array<double, 4>& target, Side side,
                               double side_weight, std::span<double> d_raw) {
  if (raw.size() != 3 || d_raw.size() != 3) throw ShapeMismatch("3-point output must have 3 values");
  const double y = side == Side::right ? 1.0 : 0.0;
  const double z = raw[0];
  const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  const double sigmoid = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  const auto corners = side_corners(side);
  const double e0 = raw[1] - target[corners[0]], e1 = raw[2] - target[corners[1]];
  d_raw[0] = side_weight * (sigmoid - y);
  d_raw[1] = e0;
  d_raw[2] = e1;
  return side_weight * (softplus - y * z) + 0.5 * (e0 * e0 + e1 * e1);
}

/// Displacement in pixels represented by one unit of network output.
inline double output_scale(const ModelConfig& cfg) { return cfg.normalize ? cfg.input_size / 2.0 : 1.0; }

inline std::array<double, 4> regression_target(const ModelConfig& cfg, const DisplacementVector& d) {
  if (cfg.normalize) return normalize_targets(d, cfg.input_size);
  return d.d;
}

/// Displacement in working-resolution pixels from raw outputs.
inline DisplacementVector decode_output(const ModelConfig& cfg, std::span<const double> raw) {
  if (cfg.head == Head::three_point) return decode_three_point(raw, output_scale(cfg));
  if (raw.size() != 4) throw ShapeMismatch("4-point output must have 4 values");
  DisplacementVector d;
  for (std::size_t i = 0; i < 4; ++i) d[i] = raw[i] * output_scale(cfg);
  return d;
}

inline DisplacementVector predict(const ModelParams& params, const ModelConfig& cfg, const ImageBuffer& img) {
  return decode_output(cfg, forward(params, cfg, img));
}

struct LossTerms {
  double total = 0.0;
  double corner = 0.0;       // corner MSE, or the 3-point loss
  double photometric = 0.0;  // unweighted
  bool photometric_used = false;
};

/// Photometric term between img warped by H(pred) and by H(gt) on their joint
/// mask, with dL/dpred (pixels) in `d_pred`. Returns nullopt when H(pred) is
/// degenerate or the masks do not overlap; the term is then skipped.
inline std::optional<double> photometric_term(const ImageBuffer& img, const DisplacementVector& pred,
                                              const DisplacementVector& gt, std::array<double, 4>& d_pred) {
  d_pred = {};
  const int w = img.width(), h = img.height();
  std::optional<Homography> hp;
  try {
    hp = displacement_to_homography(pred, w, h);
  } catch (const SingularSystem&) {
    return std::nullopt;
  }
  WarpResult a, b;
  try {
    a = warp_image(img, *hp);
    b = warp_image(img, displacement_to_homography(gt, w, h));
  } catch (const SingularSystem&) {
    return std::nullopt;
  }
  const ValidityMask joint = a.mask & b.mask;
  const std::size_t n = joint.count();
  if (n == 0) return std::nullopt;
  const double loss = photometric_l1(a.image, b.image, joint);
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  const double inv = 1.0 / static_cast<double>(n * static_cast<std::size_t>(img.channels()));
  std::vector<double> upstream(plane * img.channels(), 0.0);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!joint.valid(y, x)) continue;
        const double diff = a.image.at(c, y, x) - b.image.at(c, y, x);
        upstream[c * plane + static_cast<std::size_t>(y) * w + x] = diff > 0.0 ? inv : (diff < 0.0 ? -inv : 0.0);
      }
  d_pred = warp_gradient(img, pred, upstream);
  return loss;
}

struct LossAndGradient {
  LossTerms terms;
  std::vector<double> grad;
};

/// corner loss + lambda * photometric L1, with the full parameter gradient.
inline LossAndGradient composite_loss(const ModelParams& params, const ModelConfig& cfg, const ImageBuffer& img,
                                      const DisplacementVector& gt, std::optional<Side> side = std::nullopt) {
  const Activations a = forward_cached(params, cfg, img);
  const auto target = regression_target(cfg, gt);
  const double scale = output_scale(cfg);
  LossAndGradient r;
  std::vector<double> d_out(a.output.size(), 0.0);

  if (cfg.head == Head::four_point) {
    r.terms.corner = corner_loss(a.output, target);
    for (std::size_t i = 0; i < 4; ++i) d_out[i] = 2.0 * (a.output[i] - target[i]) / 4.0;
  } else {
    r.terms.corner = three_point_loss(a.output, target, side.value_or(label_side(gt)), cfg.side_weight, d_out);
  }
  r.terms.total = r.terms.corner;

  if (cfg.lambda > 0.0) {
    const DisplacementVector pred = decode_output(cfg, a.output);
    std::array<double, 4> d_pred{};
    if (auto p = photometric_term(img, pred, gt, d_pred)) {
      r.terms.photometric = *p;
      r.terms.photometric_used = true;
      r.terms.total += cfg.lambda * *p;
      if (cfg.head == Head::four_point) {
        for (std::size_t i = 0; i < 4; ++i) d_out[i] += cfg.lambda * d_pred[i] * scale;
      } else {
        const auto corners = side_corners(a.output[0] > 0.0 ? Side::right : Side::left);
        d_out[1] += cfg.lambda * d_pred[corners[0]] * scale;
        d_out[2] += cfg.lambda * d_pred[corners[1]] * scale;
      }
    }
  }
  backward(params, cfg, a, d_out, r.grad);
  return r;
}

struct Example {
  const ImageBuffer* image = nullptr;
  DisplacementVector label;
  Side side = Side::left;
};

struct BatchGradient {
  double loss = 0.0;  // mean total loss
  std::vector<double> grad;  // mean gradient
};

/// Per-example gradients may be computed on several threads; they are always
/// summed in example order, so the result does not depend on `threads`.
inline BatchGradient batch_gradient(const ModelParams& params, const ModelConfig& cfg, std::span<const Example> batch,
                                    int threads = 1) {
  if (batch.empty()) throw EmptySplit("empty batch");
  std::vector<LossAndGradient> parts(batch.size());
  auto work = [&](std::size_t i) { parts[i] = composite_loss(params, cfg, *batch[i].image, batch[i].label, batch[i].side); };
  const int n_threads = std::clamp<int>(threads, 1, static_cast<int>(batch.size()));
  if (n_threads == 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n_threads);
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i; (i = next.fetch_add(1)) < batch.size();) work(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  BatchGradient out{0.0, std::vector<double>(params.values.size(), 0.0)};
  for (const auto& p : parts) {
    out.loss += p.terms.total;
    for (std::size_t j = 0; j < out.grad.size(); ++j) out.grad[j] += p.grad[j];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (auto& g : out.grad) g *= inv;
  return out;
}

// Checkpoint: "SRCKPT1\n", u32 fingerprint length, fingerprint bytes, u64 count,
// then `count` little-endian IEEE-754 doubles.

inline constexpr char kCheckpointMagic[8] = {'S', 'R', 'C', 'K', 'P', 'T', '1', '\n'};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("checkpoint is truncated");
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const ModelParams& p) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.fingerprint.size()));
  out += p.fingerprint;
  detail::put_le<std::uint64_t>(out, p.values.size());
  for (double v : p.values) detail::put_le<double>(out, v);
  return out;
}

inline ModelParams decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic))
    throw IoError("not a checkpoint file");
  std::size_t pos = sizeof kCheckpointMagic;
  const auto len = detail::get_le<std::uint32_t>(bytes, pos);
  if (pos + len > bytes.size()) throw IoError("checkpoint is truncated");
  ModelParams p;
  p.fingerprint = bytes.substr(pos, len);
  pos += len;
  const auto n = detail::get_le<std::uint64_t>(bytes, pos);
  if (n > (bytes.size() - pos) / sizeof(double)) throw IoError("checkpoint is truncated");
  p.values.resize(n);
  for (auto& v : p.values) v = detail::get_le<double>(bytes, pos);
  if (pos != bytes.size()) throw IoError("trailing bytes after checkpoint");
  return p;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& p) {
  write_file_atomic(path, encode_checkpoint(p));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Loads a checkpoint and refuses it unless it was written for `cfg`'s architecture.
inline ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
  ModelParams p = load_checkpoint(path);
  if (p.fingerprint != cfg.fingerprint())
    throw InvariantViolation("checkpoint architecture '" + p.fingerprint + "' does not match '" + cfg.fingerprint() +
                             "'");
  check_params(p, cfg);
  return p;
}

}  // namespace shelfrect
