#pragma once

// Mean corner error, prediction files for external methods, forward-pass
// latency and the comparison table.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shelfrect/dataset.hpp"
#include "shelfrect/error.hpp"
#include "shelfrect/geom.hpp"
#include "shelfrect/model.hpp"
#include "shelfrect/text.hpp"

namespace shelfrect {

/// Mean Euclidean distance between corresponding corners. Corners only move
/// vertically, so each distance is |pred_i - gt_i|.
inline double mce(const DisplacementVector& pred, const DisplacementVector& gt) {
  double s = 0.0;
  for (std::size_t i = 0; i < 4; ++i) s += std::abs(pred[i] - gt[i]);
  return s / 4.0;
}

struct LatencyStats {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  int warmup = 0;
  int iterations = 0;
};

struct ImageError {
  std::string image_id;
  double mce = 0.0;
  bool included = true;
};

struct EvalResult {
  std::string method;
  std::vector<ImageError> per_image;
  double aggregate = 0.0;  // mean over included images
  std::size_t excluded = 0;
  std::optional<LatencyStats> latency;
};

/// Aggregates per-image errors; with a threshold, images whose error exceeds it
/// are excluded from the mean but keep their values.
inline EvalResult aggregate_errors(std::string method, std::vector<ImageError> errors,
                                   std::optional<double> threshold) {
  if (errors.empty()) throw EmptySplit("nothing to evaluate");
  EvalResult r{std::move(method), std::move(errors), 0.0, 0, std::nullopt};
  double sum = 0.0;
  std::size_t n = 0;
  for (auto& e : r.per_image) {
    e.included = !threshold || e.mce <= *threshold;
    if (e.included) {
      sum += e.mce;
      ++n;
    } else {
      ++r.excluded;
    }
  }
  r.aggregate = n ? sum / static_cast<double>(n) : std::nan("");
  return r;
}

/// Single-threaded forward-pass timing; warm-up runs are discarded.
inline LatencyStats measure_latency(const ModelParams& params, const ModelConfig& cfg, const ImageBuffer& img,
                                    int warmup = 10, int iterations = 100) {
  if (iterations <= 0) throw OutOfRange("latency needs at least one timed iteration");
  volatile double sink = 0.0;
  for (int i = 0; i < warmup; ++i) sink = sink + forward(params, cfg, img)[0];
  std::vector<double> ms(iterations);
  for (int i = 0; i < iterations; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    sink = sink + forward(params, cfg, img)[0];
    ms[i] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  LatencyStats s{0.0, 0.0, warmup, iterations};
  for (double v : ms) s.mean_ms += v / iterations;
  std::sort(ms.begin(), ms.end());
  s.median_ms = iterations % 2 ? ms[iterations / 2] : 0.5 * (ms[iterations / 2 - 1] + ms[iterations / 2]);
  return s;
}

/// Evaluates a model on samples already at its working resolution.
inline EvalResult evaluate(const ModelParams& params, const ModelConfig& cfg, const std::vector<Sample>& test,
                           std::optional<double> threshold = std::nullopt, std::string method = "model",
                           bool with_latency = true) {
  if (test.empty()) throw EmptySplit("test split is empty");
  std::vector<ImageError> errors;
  errors.reserve(test.size());
  for (const auto& s : test) errors.push_back({s.id, mce(predict(params, cfg, s.image), s.label), true});
  auto r = aggregate_errors(std::move(method), std::move(errors), threshold);
  if (with_latency) r.latency = measure_latency(params, cfg, test.front().image);
  return r;
}

/// Rows `image_id d0 d1 d2 d3` at working resolution.
using PredictionFile = std::map<std::string, DisplacementVector>;

inline PredictionFile parse_prediction_file(std::istream& in) {
  PredictionFile out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto f = text::split_fields(t);
    const std::string where = "predictions line " + std::to_string(line_no);
    if (f.size() != 5) throw ParseError(where + ": expected 5 fields, got " + std::to_string(f.size()));
    DisplacementVector d;
    try {
      for (std::size_t i = 0; i < 4; ++i) d[i] = text::parse_double(f[1 + i]);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (!out.emplace(std::string(f[0]), d).second)
      throw InvariantViolation(where + ": duplicate prediction for " + std::string(f[0]));
  }
  return out;
}

inline std::string format_prediction_file(const PredictionFile& p) {
  std::string out;
  for (const auto& [id, d] : p) out += id + " " + to_string(d) + "\n";
  return out;
}

/// Scores external predictions against a split whose labels are rescaled to
/// `working_size`. Every split image needs a prediction.
inline EvalResult evaluate(const PredictionFile& predictions, const DatasetSplit& test, int working_size,
                           std::optional<double> threshold = std::nullopt, std::string method = "predictions") {
  if (test.records.empty()) throw EmptySplit("test split is empty");
  std::vector<ImageError> errors;
  for (const auto& r : test.records) {
    const auto it = predictions.find(r.image_id);
    if (it == predictions.end()) throw MissingPrediction("no prediction for " + r.image_id);
    errors.push_back({r.image_id, mce(it->second, rescale_label(r, working_size, working_size)), true});
  }
  return aggregate_errors(std::move(method), std::move(errors), threshold);
}

inline std::string format_fixed(double v, int digits = 3) {
  if (!std::isfinite(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

/// Aligned text table, one row per result in input order.
inline std::string emit_report(const std::vector<EvalResult>& results) {
  if (results.empty()) throw EmptySplit("report needs at least one result");
  const std::vector<std::string> head{"Method", "Mean Corner Error (pixels)", "Inference Speed (ms)"};
  std::vector<std::vector<std::string>> rows{head};
  for (const auto& r : results)
    rows.push_back({r.method, format_fixed(r.aggregate), r.latency ? format_fixed(r.latency->mean_ms) : "-"});
  std::array<std::size_t, 3> width{};
  for (const auto& row : rows)
    for (std::size_t c = 0; c < 3; ++c) width[c] = std::max(width[c], row[c].size());
  auto line = [&](const std::vector<std::string>& row) {
    std::string s = row[0] + std::string(width[0] - row[0].size(), ' ');
    for (std::size_t c = 1; c < 3; ++c) s += " | " + std::string(width[c] - row[c].size(), ' ') + row[c];
    return s + "\n";
  };
  std::string out = line(rows[0]);
  out += std::string(width[0], '-') + "-+-" + std::string(width[1], '-') + "-+-" + std::string(width[2], '-') + "\n";
  for (std::size_t i = 1; i < rows.size(); ++i) out += line(rows[i]);
  return out;
}

}  // namespace shelfrect
