#pragma once

// Manifest storage, split loading, label rescaling and per-corner statistics.
//
// A dataset directory holds train.txt, val.txt and test.txt manifests (one
// record per line, `image_id side d0 d1 d2 d3 orig_w orig_h`) with the images
// stored beside them as <image_id>.png.

#include <unistd.h>
#include <fcntl.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "shelfrect/error.hpp"
#include "shelfrect/geom.hpp"
#include "shelfrect/image.hpp"
#include "shelfrect/png_io.hpp"
#include "shelfrect/record.hpp"

namespace shelfrect {

struct DatasetSplit {
  std::string name;
  std::vector<AnnotationRecord> records;
};

struct Dataset {
  DatasetSplit train{"train", {}};
  DatasetSplit val{"val", {}};
  DatasetSplit test{"test", {}};
};

inline const std::array<const char*, 3> kSplitNames{"train", "val", "test"};

inline DatasetSplit parse_manifest(std::istream& in, const std::string& name) {
  DatasetSplit split{name, {}};
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const std::string where = name + " line " + std::to_string(line_no);
    AnnotationRecord r;
    try {
      r = parse_manifest_line(t);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    try {
      validate(r);
    } catch (const InvariantViolation& e) {
      throw InvariantViolation(where + ": " + e.what());
    }
    if (!seen.insert(r.image_id).second) throw InvariantViolation(where + ": duplicate image id " + r.image_id);
    split.records.push_back(std::move(r));
  }
  return split;
}

inline DatasetSplit load_manifest(const std::filesystem::path& path, const std::string& name) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in, name);
}

inline std::string format_manifest(const DatasetSplit& split) {
  std::string out;
  for (const auto& r : split.records) out += to_manifest_line(r) + "\n";
  return out;
}

/// Writes `contents` to a sibling temp file, fsyncs, then renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  const auto tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw IoError("cannot create " + tmp);
  std::size_t off = 0;
  while (off < contents.size()) {
    const auto n = ::write(fd, contents.data() + off, contents.size() - off);
    if (n <= 0) {
      ::close(fd);
      throw IoError("write failed on " + tmp);
    }
    off += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw IoError("fsync failed on " + tmp);
  }
  ::close(fd);
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("rename failed for " + path.string());
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  const int dfd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
}

inline void save_manifest(const std::filesystem::path& path, const DatasetSplit& split) {
  write_file_atomic(path, format_manifest(split));
}

/// Loads train/val/test manifests from `dir`; ids must be unique across splits.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.train = load_manifest(dir / "train.txt", "train");
  ds.val = load_manifest(dir / "val.txt", "val");
  ds.test = load_manifest(dir / "test.txt", "test");
  std::set<std::string> ids;
  for (const auto* split : {&ds.train, &ds.val, &ds.test})
    for (const auto& r : split->records)
      if (!ids.insert(r.image_id).second)
        throw InvariantViolation("image id " + r.image_id + " appears in more than one split");
  return ds;
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  save_manifest(dir / "train.txt", ds.train);
  save_manifest(dir / "val.txt", ds.val);
  save_manifest(dir / "test.txt", ds.test);
}

/// Resizes to target x target (anisotropic when the original is not square) and
/// carries the label through S * H * S^-1.
inline std::pair<ImageBuffer, DisplacementVector> resize_record(const AnnotationRecord& record,
                                                                const ImageBuffer& img, int target) {
  if (target <= 0) throw OutOfRange("resize target must be positive");
  if (img.width() != record.orig_width || img.height() != record.orig_height)
    throw ShapeMismatch("image " + record.image_id + " is " + std::to_string(img.width()) + "x" +
                        std::to_string(img.height()) + " but the record says " + std::to_string(record.orig_width) +
                        "x" + std::to_string(record.orig_height));
  return {resize_bilinear(img, target, target), rescale_label(record, target, target)};
}

/// One training/evaluation example at working resolution.
struct Sample {
  std::string id;
  ImageBuffer image;
  DisplacementVector label;
  Side side = Side::left;
};

inline std::vector<Sample> load_samples(const std::filesystem::path& dir, const DatasetSplit& split, int target,
                                        int channels) {
  std::vector<Sample> out;
  out.reserve(split.records.size());
  for (const auto& r : split.records) {
    const auto img = read_png(dir / (r.image_id + ".png"));
    auto [resized, label] = resize_record(r, img, target);
    out.push_back({r.image_id, with_channels(resized, channels), label, r.side});
  }
  return out;
}

struct CornerStats {
  std::size_t count = 0;
  std::array<double, 4> corner_mean{};  // mean |d_i| per corner
  double overall_mean = 0.0;            // mean of per-record corner-magnitude means
  std::size_t left_count = 0;
  std::size_t right_count = 0;
};

inline CornerStats compute_stats(const std::vector<AnnotationRecord>& records) {
  if (records.empty()) throw EmptySplit("cannot compute statistics of an empty split");
  CornerStats s;
  s.count = records.size();
  std::array<double, 4> sum{};
  double overall = 0.0;
  for (const auto& r : records) {
    double rec = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      sum[i] += std::abs(r.d[i]);
      rec += std::abs(r.d[i]);
    }
    overall += rec / 4.0;
    (r.side == Side::left ? s.left_count : s.right_count)++;
  }
  const double n = static_cast<double>(records.size());
  for (std::size_t i = 0; i < 4; ++i) s.corner_mean[i] = sum[i] / n;
  s.overall_mean = overall / n;
  return s;
}

inline CornerStats compute_stats(const DatasetSplit& split) { return compute_stats(split.records); }

inline std::string format_stats(const CornerStats& s) {
  std::ostringstream os;
  os << "records " << s.count << "\n"
     << "left " << s.left_count << "\n"
     << "right " << s.right_count << "\n"
     << "corner_mean " << text::join_doubles(s.corner_mean) << "\n"
     << "overall_mean " << text::format_double(s.overall_mean) << "\n";
  return os.str();
}

}  // namespace shelfrect
