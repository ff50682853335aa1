#pragma once

// Local HTTP API for annotating images: listing, working-resolution image
// bytes, live rectification previews, durable annotation storage, statistics
// and model suggestions.
//
// Structured bodies are UTF-8 text, one field per line (`key value...`):
//   image_id <id>
//   side left|right
//   d <d0> <d1> <d2> <d3>
//   orig_w <pixels>          (annotations only)
//   orig_h <pixels>
// /preview and /predict displacements are in working-resolution pixels;
// stored annotations are in original-image pixels, as in the manifest.

#include <httplib.h>

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include "shelfrect/dataset.hpp"
#include "shelfrect/error.hpp"
#include "shelfrect/geom.hpp"
#include "shelfrect/image.hpp"
#include "shelfrect/model.hpp"
#include "shelfrect/png_io.hpp"
#include "shelfrect/record.hpp"
#include "shelfrect/text.hpp"
#include "shelfrect/warp.hpp"

namespace shelfrect {

struct ServiceConfig {
  std::filesystem::path images;
  std::filesystem::path store;
  std::optional<std::filesystem::path> checkpoint;
  int working_size = 224;
  std::string host = "127.0.0.1";
  int port = 8080;
};

struct Response {
  int status = 200;
  std::string content_type = "text/plain; charset=utf-8";
  std::string body;
  std::map<std::string, std::string> headers;
};

/// Parses a field-per-line body. Repeated or empty keys are rejected.
inline std::map<std::string, std::vector<std::string>> parse_body_fields(std::string_view body) {
  std::map<std::string, std::vector<std::string>> out;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= body.size()) {
    const auto nl = body.find('\n', pos);
    const auto line = text::trim(body.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    ++line_no;
    pos = nl == std::string_view::npos ? body.size() + 1 : nl + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto f = text::split_fields(line);
    std::vector<std::string> values;
    for (std::size_t i = 1; i < f.size(); ++i) values.emplace_back(f[i]);
    if (!out.emplace(std::string(f[0]), std::move(values)).second)
      throw ParseError("line " + std::to_string(line_no) + ": repeated field " + std::string(f[0]));
  }
  return out;
}

inline std::string format_record_body(const AnnotationRecord& r) {
  return "image_id " + r.image_id + "\nside " + std::string(to_string(r.side)) + "\nd " + to_string(r.d) + "\norig_w " +
         std::to_string(r.orig_width) + "\norig_h " + std::to_string(r.orig_height) + "\n";
}

/// Strong validator for a stored record: FNV-1a of its manifest line.
inline std::string record_etag(const AnnotationRecord& r) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_manifest_line(r)) h = (h ^ c) * 0x100000001b3ULL;
  char buf[24];
  std::snprintf(buf, sizeof buf, "\"%016llx\"", static_cast<unsigned long long>(h));
  return buf;
}

class AnnotationService {
 public:
  explicit AnnotationService(ServiceConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.working_size < 8) throw OutOfRange("working size must be at least 8");
    if (!std::filesystem::is_directory(cfg_.images)) throw IoError("image directory not found: " + cfg_.images.string());
    if (std::filesystem::exists(cfg_.store))
      for (auto& r : load_manifest(cfg_.store, "store").records) store_.emplace(r.image_id, std::move(r));
    if (cfg_.checkpoint) {
      params_ = load_checkpoint(*cfg_.checkpoint);
      model_ = ModelConfig::from_fingerprint(params_->fingerprint);
      check_params(*params_, *model_);
    }
  }

  const ServiceConfig& config() const { return cfg_; }

  /// `image_id orig_w orig_h annotated side d0 d1 d2 d3` or
  /// `image_id orig_w orig_h unannotated`, sorted by id.
  Response list_images() const {
    const auto snapshot = records();
    std::string body;
    for (const auto& id : image_ids()) {
      const auto img = read_png(image_path(id));
      body += id + " " + std::to_string(img.width()) + " " + std::to_string(img.height());
      const auto it = snapshot.find(id);
      if (it == snapshot.end()) {
        body += " unannotated\n";
      } else {
        body += " annotated " + std::string(to_string(it->second.side)) + " " + to_string(it->second.d) + "\n";
      }
    }
    return {200, "text/plain; charset=utf-8", body, {}};
  }

  Response get_image(const std::string& id) const {
    if (!has_image(id)) return not_found("unknown image " + id);
    return png_response(working_image(id));
  }

  /// Rectified preview; the validity bounding box is in `X-Valid-BBox` as
  /// `x0 y0 x1 y1` (inclusive) or `none`.
  Response preview(std::string_view body) const {
    return guarded([&] {
      const auto f = parse_body_fields(body);
      const std::string id = single(f, "image_id");
      if (!has_image(id)) return not_found("unknown image " + id);
      const Side side = parse_side(single(f, "side"));
      const DisplacementVector d = displacement_field(f, "d");
      check_annotation_legal(d, side, cfg_.working_size);
      const auto w = warp_image(working_image(id), displacement_to_homography(d, cfg_.working_size, cfg_.working_size));
      Response r = png_response(w.image);
      const auto box = w.mask.bounding_box();
      r.headers["X-Valid-BBox"] = box ? std::to_string(box->x0) + " " + std::to_string(box->y0) + " " +
                                            std::to_string(box->x1) + " " + std::to_string(box->y1)
                                      : "none";
      return r;
    });
  }

  /// Saves a record, acknowledging only once it is on disk. `if_match` (an ETag
  /// or `*`) and `if_none_match` (`*`) guard against conflicting writers.
  Response put_annotation(const std::string& id, std::string_view body, std::string_view if_match = {},
                          std::string_view if_none_match = {}) {
    return guarded([&] {
      if (!has_image(id)) return not_found("unknown image " + id);
      const auto f = parse_body_fields(body);
      if (f.count("image_id") && single(f, "image_id") != id)
        return Response{422, "text/plain; charset=utf-8", "image_id does not match the URL\n", {}};
      AnnotationRecord r;
      r.image_id = id;
      r.side = parse_side(single(f, "side"));
      r.d = displacement_field(f, "d");
      if (f.count("orig_w") && f.count("orig_h")) {
        r.orig_width = static_cast<int>(text::parse_int(single(f, "orig_w")));
        r.orig_height = static_cast<int>(text::parse_int(single(f, "orig_h")));
      } else {
        const auto img = read_png(image_path(id));
        r.orig_width = img.width();
        r.orig_height = img.height();
      }
      validate(r);

      std::unique_lock lock(mutex_);
      const auto it = store_.find(id);
      if (!if_match.empty() && if_match != "*" && (it == store_.end() || record_etag(it->second) != if_match))
        return conflict("record changed since it was read");
      if (if_match == "*" && it == store_.end()) return conflict("no stored record to replace");
      if (if_none_match == "*" && it != store_.end()) return conflict("record already exists");
      auto next = store_;
      next[id] = r;
      DatasetSplit split{"store", {}};
      for (const auto& [_, rec] : next) split.records.push_back(rec);
      save_manifest(cfg_.store, split);
      store_ = std::move(next);
      Response resp{200, "text/plain; charset=utf-8", format_record_body(r), {}};
      resp.headers["ETag"] = record_etag(r);
      return resp;
    });
  }

  Response get_annotation(const std::string& id) const {
    const auto snapshot = records();
    const auto it = snapshot.find(id);
    if (it == snapshot.end()) return not_found("no annotation for " + id);
    Response r{200, "text/plain; charset=utf-8", format_record_body(it->second), {}};
    r.headers["ETag"] = record_etag(it->second);
    return r;
  }

  Response stats() const {
    const auto snapshot = records();
    if (snapshot.empty()) return not_found("no annotations saved yet");
    std::vector<AnnotationRecord> recs;
    for (const auto& [_, r] : snapshot) recs.push_back(r);
    return {200, "text/plain; charset=utf-8", format_stats(compute_stats(recs)), {}};
  }

  /// Model suggestion for an image, projected onto the side with the larger
  /// movement and kept inside the legal range so it can be previewed and saved.
  /// Returns `d` at working resolution and `d_orig` in original pixels.
  Response predict(std::string_view body) const {
    if (!params_) return {503, "text/plain; charset=utf-8", "no checkpoint loaded\n", {}};
    return guarded([&] {
      const auto f = parse_body_fields(body);
      const std::string id = single(f, "image_id");
      if (!has_image(id)) return not_found("unknown image " + id);
      const auto orig = read_png(image_path(id));
      const int n = model_->input_size;
      const auto input = with_channels(resize_bilinear(orig, n, n), model_->channels);
      DisplacementVector raw = predict_model(*params_, *model_, input);
      const Side side = std::abs(raw[kTopRight]) + std::abs(raw[kBottomRight]) >
                                std::abs(raw[kTopLeft]) + std::abs(raw[kBottomLeft])
                            ? Side::right
                            : Side::left;
      const auto movable = side_corners(side);
      DisplacementVector d;
      for (auto c : movable) d[c] = std::clamp(raw[c], -0.49 * n, 0.49 * n);
      const AnnotationRecord suggestion{id, n, n, side, d};
      const DisplacementVector working = rescale_label(suggestion, cfg_.working_size, cfg_.working_size);
      const DisplacementVector original = rescale_label(suggestion, orig.width(), orig.height());
      std::string out = "image_id " + id + "\nside " + std::string(to_string(side)) + "\nd " + to_string(working) +
                        "\nd_orig " + to_string(original) + "\n";
      return Response{200, "text/plain; charset=utf-8", out, {}};
    });
  }

  /// Registers the routes on `server`.
  void mount(httplib::Server& server) {
    auto send = [](httplib::Response& res, const Response& r) {
      res.status = r.status;
      for (const auto& [k, v] : r.headers) res.set_header(k, v);
      res.set_content(r.body, r.content_type);
    };
    server.Get("/images", [this, send](const httplib::Request&, httplib::Response& res) { send(res, list_images()); });
    server.Get(R"(/images/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, get_image(req.matches[1]));
    });
    server.Post("/preview",
                [this, send](const httplib::Request& req, httplib::Response& res) { send(res, preview(req.body)); });
    server.Put(R"(/annotations/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, put_annotation(req.matches[1], req.body, req.get_header_value("If-Match"),
                               req.get_header_value("If-None-Match")));
    });
    server.Get(R"(/annotations/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, get_annotation(req.matches[1]));
    });
    server.Get("/stats", [this, send](const httplib::Request&, httplib::Response& res) { send(res, stats()); });
    server.Post("/predict",
                [this, send](const httplib::Request& req, httplib::Response& res) { send(res, predict(req.body)); });
  }

 private:
  static DisplacementVector predict_model(const ModelParams& p, const ModelConfig& c, const ImageBuffer& img) {
    return shelfrect::predict(p, c, img);
  }

  static Response not_found(const std::string& msg) { return {404, "text/plain; charset=utf-8", msg + "\n", {}}; }
  static Response conflict(const std::string& msg) { return {409, "text/plain; charset=utf-8", msg + "\n", {}}; }

  // Maps library errors onto status codes: malformed bodies 400, rule
  // violations 422, anything numeric 422 as well since it stems from the payload.
  template <typename F>
  static Response guarded(F&& f) {
    try {
      return f();
    } catch (const ParseError& e) {
      return {400, "text/plain; charset=utf-8", std::string(e.what()) + "\n", {}};
    } catch (const IoError& e) {
      return {500, "text/plain; charset=utf-8", std::string(e.what()) + "\n", {}};
    } catch (const Error& e) {
      return {422, "text/plain; charset=utf-8", std::string(e.what()) + "\n", {}};
    }
  }

  static const std::string& single(const std::map<std::string, std::vector<std::string>>& f, const std::string& key) {
    const auto it = f.find(key);
    if (it == f.end()) throw ParseError("missing field " + key);
    if (it->second.size() != 1) throw ParseError("field " + key + " takes one value");
    return it->second[0];
  }

  static DisplacementVector displacement_field(const std::map<std::string, std::vector<std::string>>& f,
                                               const std::string& key) {
    const auto it = f.find(key);
    if (it == f.end()) throw ParseError("missing field " + key);
    if (it->second.size() != 4) throw ParseError("field " + key + " takes four values");
    DisplacementVector d;
    for (std::size_t i = 0; i < 4; ++i) d[i] = text::parse_double(it->second[i]);
    return d;
  }

  std::vector<std::string> image_ids() const {
    std::vector<std::string> ids;
    for (const auto& e : std::filesystem::directory_iterator(cfg_.images)) {
      if (!e.is_regular_file() || e.path().extension() != ".png") continue;
      const auto id = e.path().stem().string();
      if (!id.empty() && id.find_first_of(" \t\r\n") == std::string::npos) ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  bool has_image(const std::string& id) const {
    if (id.empty() || id.find_first_of("/\\ \t\r\n") != std::string::npos || id == "." || id == "..") return false;
    return std::filesystem::is_regular_file(image_path(id));
  }

  std::filesystem::path image_path(const std::string& id) const { return cfg_.images / (id + ".png"); }

  ImageBuffer working_image(const std::string& id) const {
    return resize_bilinear(read_png(image_path(id)), cfg_.working_size, cfg_.working_size);
  }

  static Response png_response(const ImageBuffer& img) {
    const auto bytes = encode_png(img);
    return {200, "image/png", std::string(bytes.begin(), bytes.end()), {}};
  }

  std::map<std::string, AnnotationRecord> records() const {
    std::shared_lock lock(mutex_);
    return store_;
  }

  ServiceConfig cfg_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, AnnotationRecord> store_;
  std::optional<ModelParams> params_;
  std::optional<ModelConfig> model_;
};

/// Serves until the process is stopped. Returns false if the port cannot be bound.
inline bool serve(AnnotationService& service) {
  httplib::Server server;
  service.mount(server);
  return server.listen(service.config().host, service.config().port);
}

}  // namespace shelfrect
