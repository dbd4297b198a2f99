#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hrvc/color.hpp"
#include "hrvc/synth.hpp"
#include "hrvc/yuv_io.hpp"

using namespace hrvc;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "hrvc_test_media";
    fs::create_directories(d);
    return d;
  }();
  return (dir / name).string();
}

std::vector<uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("read_yuv420 maps bytes to [0,1]") {
  auto path = temp_path("tiny.yuv");
  std::ofstream out(path, std::ios::binary);
  const uint8_t bytes[6] = {0, 0, 0, 0, 128, 128};
  out.write(reinterpret_cast<const char*>(bytes), 6);
  out.close();

  auto seq = read_yuv420(path, 2, 2, 1);
  REQUIRE(seq.size() == 1);
  const Frame& f = seq.frames[0];
  REQUIRE(f.colorspace == Colorspace::YUV420);
  for (double v : f.planes[0].vec()) CHECK(v == 0.0);
  CHECK(f.planes[1][0] == Catch::Approx(128.0 / 255.0));
  CHECK(f.planes[2][0] == Catch::Approx(128.0 / 255.0));
}

TEST_CASE("yuv420 write/read round trips bytes exactly") {
  SynthConfig cfg;
  cfg.width = 16;
  cfg.height = 8;
  cfg.num_frames = 3;
  cfg.seed = 7;
  auto seq = convert_to(synth_sequence(cfg), Colorspace::YUV420);
  auto path = temp_path("rt.yuv");
  int64_t n = write_yuv420(seq, path);
  CHECK(n == 3 * 16 * 8 * 3 / 2);

  auto seq2 = read_yuv420(path, 16, 8, 3);
  auto path2 = temp_path("rt2.yuv");
  write_yuv420(seq2, path2);
  CHECK(slurp(path) == slurp(path2));

  // write∘read is the identity at the quantized value level
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < 3; ++p)
      for (int64_t i = 0; i < seq.frames[t].planes[p].numel(); ++i) {
        double q = quantize_u8(seq.frames[t].planes[p][i]) / 255.0;
        CHECK(seq2.frames[t].planes[p][i] == Catch::Approx(q).margin(1e-12));
      }
}

TEST_CASE("read_yuv420 reports truncation with frame index") {
  auto path = temp_path("short.yuv");
  std::ofstream out(path, std::ios::binary);
  std::vector<char> buf(2 * 2 * 3 / 2 - 1, 0);
  out.write(buf.data(), std::streamsize(buf.size()));
  out.close();
  REQUIRE_THROWS_WITH(read_yuv420(path, 2, 2, 1),
                      Catch::Matchers::ContainsSubstring("frame 0"));
}

TEST_CASE("read_yuv420 rejects odd dimensions") {
  REQUIRE_THROWS_AS(read_yuv420(temp_path("x.yuv"), 3, 2, 1), ConfigError);
}

TEST_CASE("write_yuv420 rounds half up and counts bytes") {
  Frame f = Frame::yuv420(2, 2, 0.5, 0.5);
  VideoSequence seq;
  seq.frames = {f};
  auto path = temp_path("half.yuv");
  int64_t n = write_yuv420(seq, path);
  CHECK(n == 6);
  for (uint8_t b : slurp(path)) CHECK(int(b) == 128);  // round(127.5) = 128

  VideoSequence empty;
  REQUIRE_THROWS_AS(write_yuv420(empty, path), Error);

  VideoSequence rgb;
  rgb.frames = {Frame::rgb(2, 2)};
  REQUIRE_THROWS_AS(write_yuv420(rgb, path), Error);
}

TEST_CASE("BT.601 black and white anchors") {
  Frame black = Frame::rgb(4, 4, 0.0);
  Frame yb = rgb_to_yuv420(black);
  for (double v : yb.planes[0].vec()) CHECK(v == Catch::Approx(16.0 / 255.0));
  for (double v : yb.planes[1].vec()) CHECK(v == Catch::Approx(128.0 / 255.0));
  for (double v : yb.planes[2].vec()) CHECK(v == Catch::Approx(128.0 / 255.0));

  Frame white = Frame::rgb(4, 4, 1.0);
  Frame yw = rgb_to_yuv420(white);
  for (double v : yw.planes[0].vec()) CHECK(v == Catch::Approx(235.0 / 255.0));
  for (double v : yw.planes[1].vec()) CHECK(v == Catch::Approx(128.0 / 255.0));
}

TEST_CASE("BT.601 corner colors match closed-form matrix within 1/255") {
  // Independent oracle: direct matrix evaluation per corner of the RGB cube.
  for (int r = 0; r <= 1; ++r)
    for (int g = 0; g <= 1; ++g)
      for (int b = 0; b <= 1; ++b) {
        Frame f = Frame::rgb(4, 4);
        f.planes[0].fill(r);
        f.planes[1].fill(g);
        f.planes[2].fill(b);
        Frame yuv = rgb_to_yuv420(f);
        double yp = 0.299 * r + 0.587 * g + 0.114 * b;
        double pb = 0.5 * (b - yp) / 0.886;
        double pr = 0.5 * (r - yp) / 0.701;
        double ey = (16.0 + 219.0 * yp) / 255.0;
        double eu = (128.0 + 224.0 * pb) / 255.0;
        double ev = (128.0 + 224.0 * pr) / 255.0;
        CHECK(std::abs(yuv.planes[0][0] - ey) <= 1.0 / 255.0);
        CHECK(std::abs(yuv.planes[1][0] - eu) <= 1.0 / 255.0);
        CHECK(std::abs(yuv.planes[2][0] - ev) <= 1.0 / 255.0);
      }
}

TEST_CASE("RGB->YUV420->RGB round trip on constant mid-gray") {
  Frame gray = Frame::rgb(8, 8, 0.5);
  Frame back = yuv420_to_rgb(rgb_to_yuv420(gray));
  for (int c = 0; c < 3; ++c)
    for (double v : back.planes[c].vec())
      CHECK(std::abs(v - 0.5) <= 2.0 / 255.0);
}

TEST_CASE("conversion rejects wrong colorspace") {
  REQUIRE_THROWS_AS(rgb_to_yuv420(Frame::yuv420(4, 4)), Error);
  REQUIRE_THROWS_AS(yuv420_to_rgb(Frame::rgb(4, 4)), Error);
}

TEST_CASE("synth is deterministic and honors zero velocity") {
  SynthConfig cfg;
  cfg.width = 32;
  cfg.height = 32;
  cfg.num_frames = 4;
  cfg.seed = 99;
  auto a = synth_sequence(cfg);
  auto b = synth_sequence(cfg);
  for (int t = 0; t < 4; ++t)
    for (int p = 0; p < 3; ++p)
      CHECK(max_abs_diff(a.frames[t].planes[p], b.frames[t].planes[p]) == 0.0);

  cfg.velocity_range = 0.0;
  auto still = synth_sequence(cfg);
  for (int t = 1; t < 4; ++t)
    for (int p = 0; p < 3; ++p)
      CHECK(max_abs_diff(still.frames[t].planes[p],
                         still.frames[0].planes[p]) == 0.0);
}

TEST_CASE("synth single blob moves at its configured velocity") {
  SynthConfig cfg;
  cfg.width = 32;
  cfg.height = 32;
  cfg.num_frames = 2;
  cfg.num_blobs = 1;
  cfg.seed = 3;
  cfg.fixed_velocity = {{1.0, 0.0}};
  auto seq = synth_sequence(cfg);

  // Exhaustive integer-shift correlation oracle (toroidal, on mean-removed
  // luma). Content moves by (+1, 0), so frame1 at (x+1, y) matches frame0.
  auto luma = [](const Frame& f, int y, int x) {
    return (f.planes[0].at(0, 0, y, x) + f.planes[1].at(0, 0, y, x) +
            f.planes[2].at(0, 0, y, x)) / 3.0;
  };
  double m0 = 0, m1 = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      m0 += luma(seq.frames[0], y, x);
      m1 += luma(seq.frames[1], y, x);
    }
  m0 /= 32 * 32;
  m1 /= 32 * 32;
  double best = -1e30;
  int best_dx = -99, best_dy = -99;
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx) {
      double score = 0;
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          score += (luma(seq.frames[0], y, x) - m0) *
                   (luma(seq.frames[1], (y + dy + 32) % 32, (x + dx + 32) % 32) - m1);
      if (score > best) {
        best = score;
        best_dx = dx;
        best_dy = dy;
      }
    }
  CHECK(best_dx == 1);
  CHECK(best_dy == 0);
}

TEST_CASE("synth validates its config") {
  SynthConfig cfg;
  cfg.num_frames = 1;
  REQUIRE_THROWS_AS(synth_sequence(cfg), ConfigError);
  cfg.num_frames = 2;
  cfg.width = 31;
  REQUIRE_THROWS_AS(synth_sequence(cfg), ConfigError);
}

TEST_CASE("ppm round trip") {
  SynthConfig cfg;
  cfg.width = 16;
  cfg.height = 16;
  cfg.num_frames = 2;
  cfg.seed = 5;
  auto seq = synth_sequence(cfg);
  auto path = temp_path("f.ppm");
  write_ppm(seq.frames[0], path);
  Frame f = read_ppm(path);
  for (int c = 0; c < 3; ++c)
    for (int64_t i = 0; i < f.planes[c].numel(); ++i) {
      double q = quantize_u8(seq.frames[0].planes[c][i]) / 255.0;
      CHECK(f.planes[c][i] == Catch::Approx(q).margin(1e-12));
    }
}
