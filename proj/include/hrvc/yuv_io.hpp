#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hrvc/frame.hpp"

namespace hrvc {

// Raw planar yuv420p (8-bit): per frame Y (h*w bytes), U, V (h/2*w/2 each).
// Layout is ffmpeg-compatible.

inline int64_t yuv420_frame_bytes(int width, int height) {
  return int64_t(width) * height * 3 / 2;
}

inline uint8_t quantize_u8(double v) {
  double q = std::floor(v * 255.0 + 0.5);  // round half up
  return static_cast<uint8_t>(std::min(255.0, std::max(0.0, q)));
}

inline VideoSequence read_yuv420(const std::string& path, int width, int height,
                                 int num_frames, double framerate = 30.0) {
  check_config(width > 0 && height > 0 && width % 2 == 0 && height % 2 == 0,
               "read_yuv420: dimensions must be positive and even");
  check_config(num_frames > 0, "read_yuv420: num_frames must be positive");
  std::ifstream in(path, std::ios::binary);
  check_io(in.good(), "read_yuv420: cannot open '" + path + "'");

  const int64_t fb = yuv420_frame_bytes(width, height);
  std::vector<char> buf(static_cast<size_t>(fb));
  VideoSequence seq;
  seq.framerate = framerate;
  for (int t = 0; t < num_frames; ++t) {
    in.read(buf.data(), fb);
    if (in.gcount() != fb) {
      throw IoError("read_yuv420: '" + path + "' truncated at frame " +
                    std::to_string(t) + " (got " + std::to_string(in.gcount()) +
                    " of " + std::to_string(fb) + " bytes)");
    }
    Frame f = Frame::yuv420(height, width);
    const uint8_t* p = reinterpret_cast<const uint8_t*>(buf.data());
    for (auto& plane : f.planes) {
      for (auto& v : plane.vec()) v = double(*p++) / 255.0;
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

inline int64_t write_yuv420(const VideoSequence& seq, const std::string& path) {
  seq.validate();
  check(seq.colorspace() == Colorspace::YUV420,
        "write_yuv420: expected YUV420 sequence");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check_io(out.good(), "write_yuv420: cannot open '" + path + "' for writing");
  int64_t written = 0;
  std::vector<uint8_t> buf;
  for (const auto& f : seq.frames) {
    buf.clear();
    for (const auto& plane : f.planes)
      for (double v : plane.vec()) buf.push_back(quantize_u8(v));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    written += static_cast<int64_t>(buf.size());
  }
  check_io(out.good(), "write_yuv420: write to '" + path + "' failed");
  return written;
}

// Binary PPM (P6, maxval 255), the lossless RGB interchange format the CLI
// reads and writes for image sequences.
inline Frame read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_io(in.good(), "read_ppm: cannot open '" + path + "'");
  std::string magic;
  in >> magic;
  check_io(magic == "P6", "read_ppm: '" + path + "' is not a P6 PPM");
  auto next_token = [&in, &path]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw IoError("read_ppm: unexpected EOF in header of '" + path + "'");
  };
  int w = std::stoi(next_token());
  int h = std::stoi(next_token());
  int maxval = std::stoi(next_token());
  check_io(maxval == 255, "read_ppm: only maxval 255 supported");
  in.get();  // single whitespace after header
  check_io(w > 0 && h > 0 && w % 2 == 0 && h % 2 == 0,
           "read_ppm: dimensions must be positive and even");
  std::vector<char> buf(static_cast<size_t>(w) * h * 3);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  check_io(in.gcount() == static_cast<std::streamsize>(buf.size()),
           "read_ppm: truncated pixel data in '" + path + "'");
  Frame f = Frame::rgb(h, w);
  const uint8_t* p = reinterpret_cast<const uint8_t*>(buf.data());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        f.planes[c].at(0, 0, y, x) = double(*p++) / 255.0;
  return f;
}

inline void write_ppm(const Frame& f, const std::string& path) {
  check(f.colorspace == Colorspace::RGB, "write_ppm: expected RGB frame");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check_io(out.good(), "write_ppm: cannot open '" + path + "' for writing");
  out << "P6\n" << f.width() << " " << f.height() << "\n255\n";
  std::vector<uint8_t> buf;
  buf.reserve(static_cast<size_t>(f.width()) * f.height() * 3);
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x)
      for (int c = 0; c < 3; ++c) buf.push_back(quantize_u8(f.planes[c].at(0, 0, y, x)));
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  check_io(out.good(), "write_ppm: write failed for '" + path + "'");
}

}  // namespace hrvc
