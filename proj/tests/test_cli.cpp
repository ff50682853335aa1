#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "shelfrect/dataset.hpp"
#include "shelfrect/geom.hpp"
#include "shelfrect/png_io.hpp"
#include "shelfrect/text.hpp"

namespace fs = std::filesystem;
using namespace shelfrect;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded; returns exit status and stdout.
Run cli(const std::string& args) {
  const std::string cmd = std::string(SHELFRECT_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("shelfrect_cli_" + std::to_string(getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST(Cli, ConvertZeroIsIdentity) {
  const auto r = cli("convert --d 0,0,0,0 --size 224");
  ASSERT_EQ(r.code, 0);
  const auto h = parse_homography(text::trim(r.out));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_EQ(h.matrix()[3 * i + j], i == j ? 1.0 : 0.0);
}

TEST(Cli, ConvertRoundTripsThroughMatrix) {
  const auto m = cli("convert --d 3,-1.5,2,0.25 --width 320 --height 240");
  ASSERT_EQ(m.code, 0);
  const std::string flat(text::trim(m.out));
  const auto back = cli("convert --width 320 --height 240 --matrix \"" + flat + "\"");
  ASSERT_EQ(back.code, 0);
  const auto d = parse_displacement(text::trim(back.out));
  const DisplacementVector want{3, -1.5, 2, 0.25};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(d[i], want[i], 1e-9);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli("convert --d 0,0,-224,0 --size 224").code, 3);
  EXPECT_EQ(cli("convert --d 1,2,3 --size 224").code, 2);
  EXPECT_EQ(cli("convert --size 224").code, 1);
  EXPECT_EQ(cli("no-such-command").code, 1);
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
  EXPECT_EQ(cli("stats --manifest /nonexistent/train.txt").code, 2);
}

TEST(Cli, TrainHelpShowsDefaults) {
  const auto r = cli("train --help");
  ASSERT_EQ(r.code, 0);
  for (const char* s : {"--epochs INT [51]", "--batch-size INT [80]", "--lr0 FLOAT [0.0001]",
                        "--weight-decay FLOAT [0.0001]", "--augment-probability FLOAT [0.5]", "--lambda FLOAT [1]"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
}

TEST(Cli, StatsFixture) {
  const auto dir = scratch("stats");
  std::ofstream(dir / "m.txt") << "a left 10 0 0 10 224 224\nb right 0 20 20 0 224 224\n";
  const auto r = cli("stats --manifest " + (dir / "m.txt").string());
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("corner_mean 5 10 10 5\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("overall_mean 7.5\n"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, SynthIsByteReproducible) {
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  ASSERT_EQ(cli("synth --out " + a.string() + " --count 10 --seed 4 --size 48").code, 0);
  ASSERT_EQ(cli("synth --out " + b.string() + " --count 10 --seed 4 --size 48").code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path().filename();
  }
  EXPECT_EQ(files, 13u);
  const auto ds = load_dataset(a);
  EXPECT_EQ(ds.train.records.size(), 8u);
  EXPECT_EQ(ds.val.records.size(), 1u);
  EXPECT_EQ(ds.test.records.size(), 1u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, RectifyWithManifestUndoesTheLabel) {
  const auto dir = scratch("rectify");
  ASSERT_EQ(cli("synth --out " + dir.string() + " --count 10 --seed 9 --size 64").code, 0);
  const auto rec = load_dataset(dir).train.records.front();
  const auto src = (dir / (rec.image_id + ".png")).string();
  const auto out = (dir / "flat.png").string();
  ASSERT_EQ(cli("rectify --image " + src + " --out " + out + " --manifest " + (dir / "train.txt").string() +
                " --id " + rec.image_id)
                .code,
            0);
  const auto img = read_png(out);
  EXPECT_EQ(img.width(), 64);
  EXPECT_EQ(cli("rectify --image " + src + " --out " + out + " --manifest " + (dir / "train.txt").string() +
                " --id nope")
                .code,
            2);
  EXPECT_EQ(cli("rectify --image " + src + " --out " + out).code, 1);
  fs::remove_all(dir);
}

TEST(Cli, TrainEvalAndPredictionFiles) {
  const auto dir = scratch("train");
  ASSERT_EQ(cli("--profile desk synth --out " + dir.string() + " --count 20 --seed 1").code, 0);
  const auto ckpt = (dir / "m.ckpt").string();
  ASSERT_EQ(cli("--profile desk train --data " + dir.string() + " --out " + ckpt + " --epochs 1").code, 0);
  ASSERT_TRUE(fs::exists(ckpt));

  const auto ds = load_dataset(dir);
  std::ofstream pf(dir / "zero.txt");
  for (const auto& r : ds.test.records) pf << r.image_id << " 0 0 0 0\n";
  pf.close();
  const auto r = cli("eval --data " + dir.string() + " --size 56 --checkpoint net=" + ckpt +
                     " --predictions zero=" + (dir / "zero.txt").string());
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("Method ", 0), 0u) << r.out;
  EXPECT_NE(r.out.find("\nnet "), std::string::npos);
  EXPECT_NE(r.out.find("\nzero "), std::string::npos);

  std::ofstream(dir / "partial.txt") << "nobody 0 0 0 0\n";
  EXPECT_EQ(cli("eval --data " + dir.string() + " --predictions " + (dir / "partial.txt").string()).code, 2);
  EXPECT_EQ(cli("--profile desk train --data " + dir.string() + " --out " + ckpt + " --set bogus=1").code, 2);
  fs::remove_all(dir);
}
