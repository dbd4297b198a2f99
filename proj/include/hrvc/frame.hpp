#pragma once

#include <vector>

#include "hrvc/tensor.hpp"

namespace hrvc {

enum class Colorspace : uint8_t { RGB = 0, YUV420 = 1 };

inline const char* to_string(Colorspace cs) {
  return cs == Colorspace::RGB ? "rgb" : "yuv420";
}

inline Colorspace colorspace_from_string(const std::string& s) {
  if (s == "rgb" || s == "RGB") return Colorspace::RGB;
  if (s == "yuv420" || s == "YUV420" || s == "yuv") return Colorspace::YUV420;
  throw ConfigError("unknown colorspace '" + s + "'");
}

// A single image. RGB holds three full-resolution planes; YUV420 holds one
// full-resolution luma plane and two half-resolution chroma planes.
// Values are normalized to [0,1] at I/O boundaries; intermediate codec
// state may temporarily leave that range.
struct Frame {
  Colorspace colorspace = Colorspace::RGB;
  std::vector<Tensor> planes;  // RGB: {R,G,B}; YUV420: {Y,U,V}

  Frame() = default;

  static Frame rgb(int h, int w, double fill = 0.0) {
    check_config(h % 2 == 0 && w % 2 == 0, "frame dims must be even");
    Frame f;
    f.colorspace = Colorspace::RGB;
    for (int i = 0; i < 3; ++i) f.planes.emplace_back(Shape::hw(h, w), fill);
    return f;
  }

  static Frame yuv420(int h, int w, double fill_y = 0.0, double fill_c = 0.5) {
    check_config(h % 2 == 0 && w % 2 == 0, "frame dims must be even");
    Frame f;
    f.colorspace = Colorspace::YUV420;
    f.planes.emplace_back(Shape::hw(h, w), fill_y);
    f.planes.emplace_back(Shape::hw(h / 2, w / 2), fill_c);
    f.planes.emplace_back(Shape::hw(h / 2, w / 2), fill_c);
    return f;
  }

  // Luma-resolution height/width.
  int height() const { return planes.at(0).shape().h; }
  int width() const { return planes.at(0).shape().w; }

  bool same_layout(const Frame& o) const {
    if (colorspace != o.colorspace || planes.size() != o.planes.size())
      return false;
    for (size_t i = 0; i < planes.size(); ++i)
      if (planes[i].shape() != o.planes[i].shape()) return false;
    return true;
  }

  void validate() const {
    check(planes.size() == 3, "frame must have 3 planes");
    check(height() % 2 == 0 && width() % 2 == 0, "frame dims must be even");
    if (colorspace == Colorspace::YUV420) {
      for (int i = 1; i < 3; ++i) {
        check(planes[i].shape().h == height() / 2 &&
                  planes[i].shape().w == width() / 2,
              "chroma planes must be half resolution");
      }
    } else {
      for (int i = 1; i < 3; ++i)
        check(planes[i].shape() == planes[0].shape(),
              "rgb planes must share resolution");
    }
  }

  Frame clamped01() const {
    Frame out = *this;
    for (auto& p : out.planes)
      for (auto& v : p.vec()) v = std::min(1.0, std::max(0.0, v));
    return out;
  }
};

struct VideoSequence {
  std::vector<Frame> frames;
  double framerate = 30.0;  // metadata only

  int height() const { return frames.at(0).height(); }
  int width() const { return frames.at(0).width(); }
  Colorspace colorspace() const { return frames.at(0).colorspace; }
  int size() const { return static_cast<int>(frames.size()); }

  void validate() const {
    check(!frames.empty(), "sequence must be non-empty");
    for (const auto& f : frames) {
      f.validate();
      check(f.same_layout(frames[0]), "sequence frames must share layout");
    }
  }
};

}  // namespace hrvc
