#include <gtest/gtest.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <thread>

#include "shelfrect/service.hpp"
#include "test_support.hpp"

namespace shelfrect {
namespace {

namespace fs = std::filesystem;

struct Fixture {
  fs::path root, images, store;

  explicit Fixture(const std::string& name) {
    root = fs::temp_directory_path() / ("shelfrect_svc_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(root);
    images = root / "images";
    store = root / "store.txt";
    fs::create_directories(images);
  }
  ~Fixture() { fs::remove_all(root); }

  void add_image(const std::string& id, int w, int h, unsigned seed) {
    write_png(images / (id + ".png"), testing::smooth_image(w, h, 3, seed));
  }

  ServiceConfig config(int size = 64) const { return {images, store, std::nullopt, size, "127.0.0.1", 0}; }
};

std::string body(const std::string& id, const std::string& side, const std::string& d) {
  return "image_id " + id + "\nside " + side + "\nd " + d + "\n";
}

TEST(Service, EmptyDirectoryListsNothing) {
  Fixture f("empty");
  AnnotationService s(f.config());
  const auto r = s.list_images();
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.body, "");
  EXPECT_EQ(s.stats().status, 404);
}

TEST(Service, ListingSortedWithStoredDisplacements) {
  Fixture f("list");
  f.add_image("b", 40, 30, 1);
  f.add_image("a", 20, 20, 2);
  AnnotationService s(f.config());
  ASSERT_EQ(s.put_annotation("b", "side right\nd 0 2 -1.5 0\n").status, 200);
  EXPECT_EQ(s.list_images().body, "a 20 20 unannotated\nb 40 30 annotated right 0 2 -1.5 0\n");
}

TEST(Service, ImagesAreServedAtWorkingResolution) {
  Fixture f("img");
  f.add_image("a", 100, 80, 3);
  AnnotationService s(f.config(64));
  const auto r = s.get_image("a");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.content_type, "image/png");
  const auto img = decode_png(reinterpret_cast<const std::uint8_t*>(r.body.data()), r.body.size());
  EXPECT_EQ(img.width(), 64);
  EXPECT_EQ(img.height(), 64);
  EXPECT_EQ(s.get_image("zzz").status, 404);
  EXPECT_EQ(s.get_image("../images/a").status, 404);
}

TEST(Service, ZeroPreviewIsTheImage) {
  Fixture f("prev0");
  f.add_image("a", 90, 70, 4);
  AnnotationService s(f.config(64));
  const auto p = s.preview(body("a", "left", "0 0 0 0"));
  ASSERT_EQ(p.status, 200);
  EXPECT_EQ(p.body, s.get_image("a").body);
  EXPECT_EQ(p.headers.at("X-Valid-BBox"), "0 0 63 63");
  EXPECT_EQ(s.preview(body("a", "left", "0 0 0 0")).body, p.body);
}

TEST(Service, PreviewRejectsIllegalDisplacements) {
  Fixture f("prev422");
  f.add_image("a", 64, 64, 5);
  AnnotationService s(f.config(64));
  EXPECT_EQ(s.preview(body("a", "left", "3 0 0 0")).status, 200);
  EXPECT_EQ(s.preview(body("a", "left", "3 1 0 0")).status, 422);
  EXPECT_EQ(s.preview(body("a", "right", "3 0 0 0")).status, 422);
  EXPECT_EQ(s.preview(body("a", "left", "32 0 0 0")).status, 422);
  EXPECT_EQ(s.preview(body("zz", "left", "0 0 0 0")).status, 404);
  EXPECT_EQ(s.preview("image_id a\nside left\n").status, 400);
}

TEST(Service, PreviewThenInversePreviewRoundTrips) {
  Fixture f("prevrt");
  f.add_image("a", 64, 64, 6);
  AnnotationService s(f.config(64));
  const auto p = s.preview(body("a", "right", "0 5 -4 0"));
  ASSERT_EQ(p.status, 200);
  write_png(f.images / "warped.png", decode_png(reinterpret_cast<const std::uint8_t*>(p.body.data()), p.body.size()));
  const auto back = s.preview(body("warped", "right", "0 -5 4 0"));
  ASSERT_EQ(back.status, 200);
  const auto orig = read_png(f.images / "a.png");
  const auto rt = decode_png(reinterpret_cast<const std::uint8_t*>(back.body.data()), back.body.size());
  ValidityMask interior(64, 64, false);
  for (int y = 10; y < 54; ++y)
    for (int x = 8; x < 56; ++x) interior.set(y, x, true);
  EXPECT_LT(testing::mean_abs_on_mask(rt, orig, interior), 0.02);
}

TEST(Service, SaveThenGetAndValidation) {
  Fixture f("save");
  f.add_image("a", 200, 100, 7);
  AnnotationService s(f.config());
  const auto put = s.put_annotation("a", "side left\nd 10 0 0 -6.25\n");
  ASSERT_EQ(put.status, 200);
  const auto get = s.get_annotation("a");
  EXPECT_EQ(get.status, 200);
  EXPECT_EQ(get.body, "image_id a\nside left\nd 10 0 0 -6.25\norig_w 200\norig_h 100\n");
  EXPECT_EQ(get.body, put.body);
  EXPECT_EQ(get.headers.at("ETag"), put.headers.at("ETag"));
  EXPECT_EQ(s.put_annotation("a", "side left\nd 10 1 0 0\n").status, 422);
  EXPECT_EQ(s.put_annotation("a", "side left\nd 50 0 0 0\n").status, 422);
  EXPECT_EQ(s.put_annotation("nope", "side left\nd 1 0 0 0\n").status, 404);
  EXPECT_EQ(s.get_annotation("nope").status, 404);
  EXPECT_EQ(s.get_annotation("a").body, put.body);
  // the store is a loadable manifest
  EXPECT_EQ(load_manifest(f.store, "train").records.size(), 1u);
}

TEST(Service, ConflictingWritesAreRejected) {
  Fixture f("conflict");
  f.add_image("a", 64, 64, 8);
  AnnotationService s(f.config());
  ASSERT_EQ(s.put_annotation("a", "side left\nd 1 0 0 0\n", {}, "*").status, 200);
  EXPECT_EQ(s.put_annotation("a", "side left\nd 2 0 0 0\n", {}, "*").status, 409);
  const auto etag = s.get_annotation("a").headers.at("ETag");
  ASSERT_EQ(s.put_annotation("a", "side left\nd 3 0 0 0\n", etag).status, 200);
  EXPECT_EQ(s.put_annotation("a", "side left\nd 4 0 0 0\n", etag).status, 409);
  EXPECT_NE(s.get_annotation("a").body.find("d 3 0 0 0"), std::string::npos);
}

TEST(Service, StatsOfTheTwoRecordFixture) {
  Fixture f("stats");
  f.add_image("a", 100, 100, 9);
  f.add_image("b", 100, 100, 10);
  AnnotationService s(f.config());
  ASSERT_EQ(s.put_annotation("a", "side left\nd 10 0 0 -10\n").status, 200);
  ASSERT_EQ(s.put_annotation("b", "side right\nd 0 20 -20 0\n").status, 200);
  const auto r = s.stats();
  ASSERT_EQ(r.status, 200);
  EXPECT_NE(r.body.find("corner_mean 5 10 10 5\n"), std::string::npos) << r.body;
}

TEST(Service, PredictNeedsCheckpoint) {
  Fixture f("nopredict");
  f.add_image("a", 64, 64, 11);
  AnnotationService s(f.config());
  EXPECT_EQ(s.predict("image_id a\n").status, 503);
}

TEST(Service, ZeroCheckpointSuggestsZeroAndPreviews) {
  Fixture f("predict");
  f.add_image("a", 80, 60, 12);
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.widths = {4, 4};
  save_checkpoint(f.root / "zero.ckpt", zero_params(cfg));
  auto c = f.config();
  c.checkpoint = f.root / "zero.ckpt";
  AnnotationService s(c);
  const auto r = s.predict("image_id a\n");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body, "image_id a\nside left\nd 0 0 0 0\nd_orig 0 0 0 0\n");
  EXPECT_EQ(s.predict("image_id a\n").body, r.body);
  const auto fields = parse_body_fields(r.body);
  const std::string pv = "image_id a\nside " + fields.at("side")[0] + "\nd " + fields.at("d")[0] + " " +
                         fields.at("d")[1] + " " + fields.at("d")[2] + " " + fields.at("d")[3] + "\n";
  EXPECT_EQ(s.preview(pv).status, 200);
}

TEST(Service, TrainedCheckpointSuggestionIsOneSidedAndLegal) {
  Fixture f("predict2");
  f.add_image("a", 64, 64, 13);
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.widths = {4, 4};
  auto p = init_params(cfg, 1);
  const auto l = layout_of(cfg);
  for (std::size_t i = 0; i < 4; ++i) p.values[l.head_bias + i] = (i % 2 ? 0.9 : -0.3);
  save_checkpoint(f.root / "m.ckpt", p);
  auto c = f.config();
  c.checkpoint = f.root / "m.ckpt";
  AnnotationService s(c);
  const auto r = s.predict("image_id a\n");
  ASSERT_EQ(r.status, 200);
  const auto fields = parse_body_fields(r.body);
  DisplacementVector d;
  for (std::size_t i = 0; i < 4; ++i) d[i] = text::parse_double(fields.at("d")[i]);
  EXPECT_NO_THROW(check_annotation_legal(d, parse_side(fields.at("side")[0]), 64));
}

// Runs a server in a child process; returns its pid once it answers.
pid_t spawn_server(const ServiceConfig& cfg) {
  const pid_t pid = ::fork();
  if (pid == 0) {
    AnnotationService s(cfg);
    serve(s);
    ::_exit(0);
  }
  httplib::Client cli(cfg.host, cfg.port);
  for (int i = 0; i < 200; ++i) {
    if (auto r = cli.Get("/images")) return pid;
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
  ::kill(pid, SIGKILL);
  ::waitpid(pid, nullptr, 0);
  return -1;
}

TEST(ServiceHttp, AcknowledgedSaveSurvivesKill) {
  Fixture f("crash");
  f.add_image("a", 64, 64, 14);
  f.add_image("b", 64, 64, 15);
  auto cfg = f.config();
  cfg.port = 20000 + ::getpid() % 20000;

  const pid_t first = spawn_server(cfg);
  ASSERT_GT(first, 0);
  std::string acked;
  {
    httplib::Client cli(cfg.host, cfg.port);
    auto r = cli.Put("/annotations/a", "side right\nd 0 3.5 -2 0\n", "text/plain");
    ASSERT_TRUE(r);
    ASSERT_EQ(r->status, 200);
    acked = r->body;
    auto r2 = cli.Put("/annotations/b", "side left\nd 1 0 0 1\n", "text/plain");
    ASSERT_TRUE(r2);
    ASSERT_EQ(r2->status, 200);
    auto img = cli.Get("/images/a");
    ASSERT_TRUE(img);
    auto pv = cli.Post("/preview", body("a", "left", "0 0 0 0"), "text/plain");
    ASSERT_TRUE(pv);
    EXPECT_EQ(pv->body, img->body);
    EXPECT_EQ(cli.Post("/preview", body("a", "left", "1 1 0 0"), "text/plain")->status, 422);
    EXPECT_EQ(cli.Get("/images/nothing")->status, 404);
  }
  ::kill(first, SIGKILL);
  ::waitpid(first, nullptr, 0);

  const pid_t second = spawn_server(cfg);
  ASSERT_GT(second, 0);
  {
    httplib::Client cli(cfg.host, cfg.port);
    auto r = cli.Get("/annotations/a");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(r->body, acked);
    EXPECT_EQ(cli.Get("/annotations/b")->status, 200);
  }
  ::kill(second, SIGKILL);
  ::waitpid(second, nullptr, 0);
}

}  // namespace
}  // namespace shelfrect
