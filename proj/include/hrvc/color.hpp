#pragma once

#include "hrvc/frame.hpp"

namespace hrvc {

// BT.601 limited-range (studio swing) conversion. Chroma is downsampled by
// 2x2 box average and upsampled bilinearly with center-sited samples: the
// chroma sample (cy, cx) sits at luma coordinates (2*cy+0.5, 2*cx+0.5).
namespace bt601 {
inline constexpr double kKr = 0.299;
inline constexpr double kKg = 0.587;
inline constexpr double kKb = 0.114;
}  // namespace bt601

inline double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Full-resolution RGB -> (Y', Pb, Pr) with Y' in [0,1], Pb/Pr in [-0.5,0.5].
inline void rgb_to_ypbpr(double r, double g, double b, double& y, double& pb,
                         double& pr) {
  using namespace bt601;
  y = kKr * r + kKg * g + kKb * b;
  pb = 0.5 * (b - y) / (1.0 - kKb);
  pr = 0.5 * (r - y) / (1.0 - kKr);
}

inline void ypbpr_to_rgb(double y, double pb, double pr, double& r, double& g,
                         double& b) {
  using namespace bt601;
  r = y + 2.0 * (1.0 - kKr) * pr;
  b = y + 2.0 * (1.0 - kKb) * pb;
  g = (y - kKr * r - kKb * b) / kKg;
}

inline Frame rgb_to_yuv420(const Frame& in) {
  check(in.colorspace == Colorspace::RGB, "rgb_to_yuv420: expected RGB input");
  in.validate();
  const int h = in.height(), w = in.width();
  Frame out = Frame::yuv420(h, w);
  Tensor pb(Shape::hw(h, w)), pr(Shape::hw(h, w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double yy, vb, vr;
      rgb_to_ypbpr(in.planes[0].at(0, 0, y, x), in.planes[1].at(0, 0, y, x),
                   in.planes[2].at(0, 0, y, x), yy, vb, vr);
      out.planes[0].at(0, 0, y, x) = clamp01((16.0 + 219.0 * yy) / 255.0);
      pb.at(0, 0, y, x) = vb;
      pr.at(0, 0, y, x) = vr;
    }
  }
  for (int cy = 0; cy < h / 2; ++cy) {
    for (int cx = 0; cx < w / 2; ++cx) {
      double sb = 0.0, sr = 0.0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          sb += pb.at(0, 0, 2 * cy + dy, 2 * cx + dx);
          sr += pr.at(0, 0, 2 * cy + dy, 2 * cx + dx);
        }
      out.planes[1].at(0, 0, cy, cx) = clamp01((128.0 + 224.0 * sb / 4.0) / 255.0);
      out.planes[2].at(0, 0, cy, cx) = clamp01((128.0 + 224.0 * sr / 4.0) / 255.0);
    }
  }
  return out;
}

// Bilinear upsample of a (h/2, w/2) chroma plane to (h, w), center-sited.
inline Tensor upsample_chroma_bilinear(const Tensor& c, int h, int w) {
  const int ch = c.shape().h, cw = c.shape().w;
  Tensor out(Shape::hw(h, w));
  for (int y = 0; y < h; ++y) {
    double sy = (y - 0.5) / 2.0;  // luma y -> chroma coordinate
    int y0 = static_cast<int>(std::floor(sy));
    double fy = sy - y0;
    int y0c = std::min(ch - 1, std::max(0, y0));
    int y1c = std::min(ch - 1, std::max(0, y0 + 1));
    for (int x = 0; x < w; ++x) {
      double sx = (x - 0.5) / 2.0;
      int x0 = static_cast<int>(std::floor(sx));
      double fx = sx - x0;
      int x0c = std::min(cw - 1, std::max(0, x0));
      int x1c = std::min(cw - 1, std::max(0, x0 + 1));
      double v = (1 - fy) * ((1 - fx) * c.at(0, 0, y0c, x0c) +
                             fx * c.at(0, 0, y0c, x1c)) +
                 fy * ((1 - fx) * c.at(0, 0, y1c, x0c) +
                       fx * c.at(0, 0, y1c, x1c));
      out.at(0, 0, y, x) = v;
    }
  }
  return out;
}

inline Frame yuv420_to_rgb(const Frame& in) {
  check(in.colorspace == Colorspace::YUV420,
        "yuv420_to_rgb: expected YUV420 input");
  in.validate();
  const int h = in.height(), w = in.width();
  Tensor u = upsample_chroma_bilinear(in.planes[1], h, w);
  Tensor v = upsample_chroma_bilinear(in.planes[2], h, w);
  Frame out = Frame::rgb(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double yy = (255.0 * in.planes[0].at(0, 0, y, x) - 16.0) / 219.0;
      double pb = (255.0 * u.at(0, 0, y, x) - 128.0) / 224.0;
      double pr = (255.0 * v.at(0, 0, y, x) - 128.0) / 224.0;
      double r, g, b;
      ypbpr_to_rgb(yy, pb, pr, r, g, b);
      out.planes[0].at(0, 0, y, x) = clamp01(r);
      out.planes[1].at(0, 0, y, x) = clamp01(g);
      out.planes[2].at(0, 0, y, x) = clamp01(b);
    }
  }
  return out;
}

inline Frame convert_to(const Frame& f, Colorspace target) {
  if (f.colorspace == target) return f;
  return target == Colorspace::YUV420 ? rgb_to_yuv420(f) : yuv420_to_rgb(f);
}

inline VideoSequence convert_to(const VideoSequence& seq, Colorspace target) {
  if (seq.colorspace() == target) return seq;
  VideoSequence out;
  out.framerate = seq.framerate;
  for (const auto& f : seq.frames) out.frames.push_back(convert_to(f, target));
  return out;
}

}  // namespace hrvc
