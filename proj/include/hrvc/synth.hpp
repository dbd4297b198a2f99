#pragma once

#include <optional>

#include "hrvc/color.hpp"
#include "hrvc/frame.hpp"

namespace hrvc {

// Synthetic training/eval data: softly textured static background plus
// Gaussian blobs translating at constant per-blob velocity on a torus.
// Constant velocity makes consecutive flow maps (and residual maps) nearly
// identical over time, which is exactly the structure the predictors are
// meant to exploit.
struct SynthConfig {
  int width = 64;
  int height = 64;
  int num_frames = 8;
  int num_blobs = 4;
  double velocity_range = 2.0;  // pixels/frame, per axis
  double texture_scale = 8.0;   // background feature size in pixels
  uint64_t seed = 0;
  std::optional<std::pair<double, double>> fixed_velocity;  // (vx, vy) override

  void validate() const {
    check_config(width > 0 && height > 0 && width % 2 == 0 && height % 2 == 0,
                 "synth: dims must be positive and even");
    check_config(num_frames >= 2, "synth: num_frames must be >= 2");
    check_config(num_blobs >= 0, "synth: num_blobs must be >= 0");
    check_config(velocity_range >= 0.0, "synth: velocity_range must be >= 0");
    check_config(texture_scale > 0.0, "synth: texture_scale must be > 0");
  }
};

namespace detail {

// Value noise: coarse random grid, bilinearly upsampled (toroidal).
inline Tensor value_noise(int h, int w, double scale, Rng& rng) {
  int gh = std::max(2, int(std::ceil(h / scale)));
  int gw = std::max(2, int(std::ceil(w / scale)));
  Tensor grid(Shape::hw(gh, gw));
  for (auto& v : grid.vec()) v = rng.uniform();
  Tensor out(Shape::hw(h, w));
  for (int y = 0; y < h; ++y) {
    double gy = double(y) * gh / h;
    int y0 = int(gy) % gh, y1 = (y0 + 1) % gh;
    double fy = gy - int(gy);
    for (int x = 0; x < w; ++x) {
      double gx = double(x) * gw / w;
      int x0 = int(gx) % gw, x1 = (x0 + 1) % gw;
      double fx = gx - int(gx);
      out.at(0, 0, y, x) = (1 - fy) * ((1 - fx) * grid.at(0, 0, y0, x0) +
                                       fx * grid.at(0, 0, y0, x1)) +
                           fy * ((1 - fx) * grid.at(0, 0, y1, x0) +
                                 fx * grid.at(0, 0, y1, x1));
    }
  }
  return out;
}

struct Blob {
  double cx, cy, vx, vy, radius;
  double amp[3];
};

}  // namespace detail

inline VideoSequence synth_sequence(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int h = cfg.height, w = cfg.width;

  std::vector<Tensor> bg;
  for (int c = 0; c < 3; ++c) {
    Tensor t = detail::value_noise(h, w, cfg.texture_scale, rng);
    for (auto& v : t.vec()) v = 0.25 + 0.5 * v;
    bg.push_back(std::move(t));
  }

  std::vector<detail::Blob> blobs;
  for (int i = 0; i < cfg.num_blobs; ++i) {
    detail::Blob b;
    b.cx = rng.uniform(0.0, w);
    b.cy = rng.uniform(0.0, h);
    if (cfg.fixed_velocity) {
      b.vx = cfg.fixed_velocity->first;
      b.vy = cfg.fixed_velocity->second;
    } else {
      b.vx = rng.uniform(-cfg.velocity_range, cfg.velocity_range);
      b.vy = rng.uniform(-cfg.velocity_range, cfg.velocity_range);
    }
    b.radius = rng.uniform(std::min(h, w) / 16.0, std::min(h, w) / 6.0);
    for (int c = 0; c < 3; ++c) b.amp[c] = rng.uniform(-0.45, 0.45);
    blobs.push_back(b);
  }

  VideoSequence seq;
  for (int t = 0; t < cfg.num_frames; ++t) {
    Frame f = Frame::rgb(h, w);
    for (int c = 0; c < 3; ++c) f.planes[c] = bg[c];
    for (const auto& b : blobs) {
      // Torus render: wrap the center, then add the 9 periodic copies that
      // can reach the frame so flow stays constant through wrap events.
      double cx = std::fmod(std::fmod(b.cx + b.vx * t, double(w)) + w, double(w));
      double cy = std::fmod(std::fmod(b.cy + b.vy * t, double(h)) + h, double(h));
      double ext = 3.0 * b.radius;
      for (int oy = -1; oy <= 1; ++oy) {
        for (int ox = -1; ox <= 1; ++ox) {
          double bx = cx + ox * w, by = cy + oy * h;
          if (bx < -ext || bx > w + ext || by < -ext || by > h + ext) continue;
          int x_lo = std::max(0, int(std::floor(bx - ext)));
          int x_hi = std::min(w - 1, int(std::ceil(bx + ext)));
          int y_lo = std::max(0, int(std::floor(by - ext)));
          int y_hi = std::min(h - 1, int(std::ceil(by + ext)));
          for (int y = y_lo; y <= y_hi; ++y) {
            for (int x = x_lo; x <= x_hi; ++x) {
              double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
              double g = std::exp(-d2 / (2.0 * b.radius * b.radius));
              for (int c = 0; c < 3; ++c)
                f.planes[c].at(0, 0, y, x) += b.amp[c] * g;
            }
          }
        }
      }
    }
    for (int c = 0; c < 3; ++c)
      for (auto& v : f.planes[c].vec()) v = clamp01(v);
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

}  // namespace hrvc
