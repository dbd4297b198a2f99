#pragma once

#include "hrvc/autodiff.hpp"
#include "hrvc/frame.hpp"

namespace hrvc {

// Scale-space warping: trilinear sampling of a Gaussian blur stack at
// flow-displaced coordinates. The flow's third channel is a continuous index
// into the stack, clamped to [0, L-1] before sampling. Spatial sampling is
// bilinear with clamp-to-edge; blurs use reflected-border padding.

inline std::vector<double> default_sigmas() { return {0.0, 1.0, 2.0, 4.0, 8.0, 16.0}; }
inline constexpr int kScaleLevels = 6;

namespace warp_detail {

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

inline std::vector<double> gauss_kernel(double sigma) {
  int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + r];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable reflect-padded blur over the (h, w) planes of a (n, c, h, w)
// tensor. adjoint=true applies the exact transpose (scatter form).
inline Tensor gauss_blur(const Tensor& t, double sigma, bool adjoint = false) {
  if (sigma <= 0.0) return t;
  const Shape& s = t.shape();
  const auto k = gauss_kernel(sigma);
  const int r = (int(k.size()) - 1) / 2;
  Tensor tmp(s), out(s);
  const int planes = s.n * s.c;
  for (int p = 0; p < planes; ++p) {
    const double* src = t.data() + int64_t(p) * s.h * s.w;
    double* mid = tmp.data() + int64_t(p) * s.h * s.w;
    double* dst = out.data() + int64_t(p) * s.h * s.w;
    // rows (along x)
    for (int y = 0; y < s.h; ++y) {
      const double* sr = src + int64_t(y) * s.w;
      double* dr = mid + int64_t(y) * s.w;
      if (!adjoint) {
        for (int x = 0; x < s.w; ++x) {
          double acc = 0.0;
          for (int i = -r; i <= r; ++i)
            acc += k[i + r] * sr[reflect_index(x + i, s.w)];
          dr[x] = acc;
        }
      } else {
        for (int x = 0; x < s.w; ++x) dr[x] = 0.0;
        for (int x = 0; x < s.w; ++x)
          for (int i = -r; i <= r; ++i)
            dr[reflect_index(x + i, s.w)] += k[i + r] * sr[x];
      }
    }
    // cols (along y)
    if (!adjoint) {
      for (int x = 0; x < s.w; ++x)
        for (int y = 0; y < s.h; ++y) {
          double acc = 0.0;
          for (int i = -r; i <= r; ++i)
            acc += k[i + r] * mid[int64_t(reflect_index(y + i, s.h)) * s.w + x];
          dst[int64_t(y) * s.w + x] = acc;
        }
    } else {
      for (int64_t i = 0; i < int64_t(s.h) * s.w; ++i) dst[i] = 0.0;
      for (int y = 0; y < s.h; ++y)
        for (int i = -r; i <= r; ++i) {
          double wv = k[i + r];
          double* drow = dst + int64_t(reflect_index(y + i, s.h)) * s.w;
          const double* srow = mid + int64_t(y) * s.w;
          for (int x = 0; x < s.w; ++x) drow[x] += wv * srow[x];
        }
    }
  }
  return out;
}

}  // namespace warp_detail

struct ScaleVolume {
  std::vector<Tensor> levels;  // each (n, c, h, w)
  std::vector<double> sigmas;
};

inline void validate_sigmas(const std::vector<double>& sigmas) {
  check_config(sigmas.size() >= 2, "scale volume needs at least 2 levels");
  check_config(sigmas[0] == 0.0, "sigmas[0] must be 0");
  for (size_t i = 1; i < sigmas.size(); ++i)
    check_config(sigmas[i] > sigmas[i - 1], "sigmas must be strictly increasing");
}

inline ScaleVolume build_scale_volume(const Tensor& plane,
                                      const std::vector<double>& sigmas) {
  validate_sigmas(sigmas);
  ScaleVolume vol;
  vol.sigmas = sigmas;
  vol.levels.reserve(sigmas.size());
  for (double s : sigmas)
    vol.levels.push_back(warp_detail::gauss_blur(plane, s));
  return vol;
}

// Trilinear sample of `vol` at (p + (dx,dy)(p), scale(p)). flow: (n,3,h,w).
inline Tensor sample_scale_volume(const ScaleVolume& vol, const Tensor& flow) {
  const Shape& s = vol.levels[0].shape();
  const Shape& fs = flow.shape();
  check(fs.n == s.n && fs.c == 3 && fs.h == s.h && fs.w == s.w,
        "sample_scale_volume: flow shape mismatch " + fs.str() + " vs " + s.str());
  const int L = int(vol.levels.size());
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        double sx = x + flow.at(n, 0, y, x);
        double sy = y + flow.at(n, 1, y, x);
        double sc = std::min(double(L - 1), std::max(0.0, flow.at(n, 2, y, x)));
        int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
        double fx = sx - x0, fy = sy - y0;
        int x0c = std::min(s.w - 1, std::max(0, x0));
        int x1c = std::min(s.w - 1, std::max(0, x0 + 1));
        int y0c = std::min(s.h - 1, std::max(0, y0));
        int y1c = std::min(s.h - 1, std::max(0, y0 + 1));
        int l0 = std::min(L - 2, int(std::floor(sc)));
        double fl = sc - l0;
        for (int c = 0; c < s.c; ++c) {
          double v = 0.0;
          for (int li = 0; li < 2; ++li) {
            double wl = li == 0 ? 1.0 - fl : fl;
            if (wl == 0.0) continue;
            const Tensor& lev = vol.levels[l0 + li];
            double vv = (1 - fy) * ((1 - fx) * lev.at(n, c, y0c, x0c) +
                                    fx * lev.at(n, c, y0c, x1c)) +
                        fy * ((1 - fx) * lev.at(n, c, y1c, x0c) +
                              fx * lev.at(n, c, y1c, x1c));
            v += wl * vv;
          }
          out.at(n, c, y, x) = v;
        }
      }
    }
  }
  return out;
}

namespace ad {

// Differentiable scale-space warp; gradients flow to both image and flow.
inline Var ss_warp(const Var& img, const Var& flow,
                   const std::vector<double>& sigmas) {
  validate_sigmas(sigmas);
  auto vol = std::make_shared<ScaleVolume>(build_scale_volume(img->val, sigmas));
  Tensor out = sample_scale_volume(*vol, flow->val);
  return detail::make_result(std::move(out), {img, flow}, [vol](Node& n) {
    const Var& img = n.parents[0];
    const Var& flow = n.parents[1];
    const Shape& s = img->val.shape();
    const int L = int(vol->levels.size());
    std::vector<Tensor> gvol;
    if (img->requires_grad)
      for (int l = 0; l < L; ++l) gvol.emplace_back(s, 0.0);
    Tensor* gflow = flow->requires_grad ? &flow->grad_ref() : nullptr;
    for (int b = 0; b < s.n; ++b) {
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
          double raw_sc = flow->val.at(b, 2, y, x);
          double sx = x + flow->val.at(b, 0, y, x);
          double sy = y + flow->val.at(b, 1, y, x);
          double sc = std::min(double(L - 1), std::max(0.0, raw_sc));
          int x0 = int(std::floor(sx)), y0 = int(std::floor(sy));
          double fx = sx - x0, fy = sy - y0;
          int x0c = std::min(s.w - 1, std::max(0, x0));
          int x1c = std::min(s.w - 1, std::max(0, x0 + 1));
          int y0c = std::min(s.h - 1, std::max(0, y0));
          int y1c = std::min(s.h - 1, std::max(0, y0 + 1));
          int l0 = std::min(L - 2, int(std::floor(sc)));
          double fl = sc - l0;
          double gdx = 0.0, gdy = 0.0, gds = 0.0;
          for (int c = 0; c < s.c; ++c) {
            double g = n.grad.at(b, c, y, x);
            if (g == 0.0) continue;
            double vlev[2];
            for (int li = 0; li < 2; ++li) {
              const Tensor& lev = vol->levels[l0 + li];
              double v00 = lev.at(b, c, y0c, x0c), v01 = lev.at(b, c, y0c, x1c);
              double v10 = lev.at(b, c, y1c, x0c), v11 = lev.at(b, c, y1c, x1c);
              vlev[li] = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                         fy * ((1 - fx) * v10 + fx * v11);
              double wl = li == 0 ? 1.0 - fl : fl;
              if (gvol.size() && wl != 0.0) {
                Tensor& gl = gvol[l0 + li];
                gl.at(b, c, y0c, x0c) += g * wl * (1 - fy) * (1 - fx);
                gl.at(b, c, y0c, x1c) += g * wl * (1 - fy) * fx;
                gl.at(b, c, y1c, x0c) += g * wl * fy * (1 - fx);
                gl.at(b, c, y1c, x1c) += g * wl * fy * fx;
              }
              if (gflow) {
                double dvdx = (1 - fy) * (v01 - v00) + fy * (v11 - v10);
                double dvdy = (1 - fx) * (v10 - v00) + fx * (v11 - v01);
                gdx += g * wl * dvdx;
                gdy += g * wl * dvdy;
              }
            }
            gds += g * (vlev[1] - vlev[0]);
          }
          if (gflow) {
            gflow->at(b, 0, y, x) += gdx;
            gflow->at(b, 1, y, x) += gdy;
            if (raw_sc >= 0.0 && raw_sc <= double(L - 1))
              gflow->at(b, 2, y, x) += gds;
          }
        }
      }
    }
    if (img->requires_grad) {
      Tensor& gi = img->grad_ref();
      for (int l = 0; l < L; ++l) {
        Tensor adj = warp_detail::gauss_blur(gvol[l], vol->sigmas[l], true);
        for (int64_t i = 0; i < gi.numel(); ++i) gi[i] += adj[i];
      }
    }
  });
}

// Derives the half-resolution chroma flow: average-pool all channels, then
// halve the displacements; the scale channel is kept as-is.
inline Var chroma_flow(const Var& flow) {
  Var pooled = avgpool2(flow);
  Var dxy = mul_scalar(slice_c(pooled, 0, 2), 0.5);
  Var sc = slice_c(pooled, 2, 1);
  return concat_c({dxy, sc});
}

// Warps a 3-channel flow field by another flow (channel-wise scale-space
// warp); the scale channel of the result is re-clamped to [0, L-1].
inline Var warp_flow(const Var& field, const Var& by,
                     const std::vector<double>& sigmas) {
  Var warped = ss_warp(field, by, sigmas);
  Var dxy = slice_c(warped, 0, 2);
  Var sc = clampv(slice_c(warped, 2, 1), 0.0, double(sigmas.size() - 1));
  return concat_c({dxy, sc});
}

}  // namespace ad

// Plain-tensor wrappers (eval paths, tests).
inline Tensor ss_warp(const Tensor& img, const Tensor& flow,
                      const std::vector<double>& sigmas) {
  validate_sigmas(sigmas);
  return sample_scale_volume(build_scale_volume(img, sigmas), flow);
}

inline Tensor warp_flow(const Tensor& field, const Tensor& by,
                        const std::vector<double>& sigmas) {
  Tensor out = ss_warp(field, by, sigmas);
  const Shape& s = out.shape();
  const double smax = double(sigmas.size() - 1);
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        double& v = out.at(n, 2, y, x);
        v = std::min(smax, std::max(0.0, v));
      }
  return out;
}

inline Tensor chroma_flow(const Tensor& flow) {
  ad::Var f = ad::constant(flow);
  return ad::chroma_flow(f)->val;
}

// Per-plane warp for YUV420: luma uses the given luma-resolution flow,
// chroma uses the derived half-resolution flow. Warping always runs at each
// plane's native resolution.
inline Frame warp_yuv420(const Frame& frame, const Tensor& flow,
                         const std::vector<double>& sigmas) {
  check(frame.colorspace == Colorspace::YUV420, "warp_yuv420: expected YUV420");
  const int h = frame.height(), w = frame.width();
  check(flow.shape().c == 3 && flow.shape().h == h && flow.shape().w == w,
        "warp_yuv420: flow must be at luma resolution");
  Frame out = frame;
  out.planes[0] =
      ss_warp(frame.planes[0].reshaped(Shape::chw(1, h, w)), flow, sigmas)
          .reshaped(Shape::hw(h, w));
  Tensor cf = chroma_flow(flow);
  for (int i = 1; i < 3; ++i)
    out.planes[i] = ss_warp(frame.planes[i].reshaped(Shape::chw(1, h / 2, w / 2)),
                            cf, sigmas)
                        .reshaped(Shape::hw(h / 2, w / 2));
  return out;
}

}  // namespace hrvc
