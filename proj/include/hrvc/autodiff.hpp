#pragma once

#include <cblas.h>

#include <functional>
#include <memory>
#include <unordered_set>

#include "hrvc/tensor.hpp"

namespace hrvc {
namespace ad {

// Tape-based reverse-mode autodiff over Tensor. A graph is built per forward
// pass; nodes hold the value, a lazily allocated gradient, and a closure that
// scatters this node's gradient into its parents. Ops skip closure creation
// entirely when no input requires gradients, so the same code serves as the
// eval-mode fast path.
struct Node {
  Tensor val;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  std::string name;

  Tensor& grad_ref() {
    if (grad.numel() != val.numel()) grad = Tensor::zeros(val.shape());
    return grad;
  }
  void zero_grad() {
    if (grad.numel() > 0) grad.fill(0.0);
  }
};

using Var = std::shared_ptr<Node>;

inline Var make_var(Tensor t, bool requires_grad = false,
                    const std::string& name = "") {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = requires_grad;
  n->name = name;
  return n;
}

inline Var constant(Tensor t) { return make_var(std::move(t), false); }

inline bool any_requires_grad(const std::vector<Var>& vs) {
  for (const auto& v : vs)
    if (v->requires_grad) return true;
  return false;
}

namespace detail {

inline Var make_result(Tensor val, std::vector<Var> parents,
                       std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  n->requires_grad = any_requires_grad(parents);
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

inline Var add(const Var& a, const Var& b) {
  check(a->val.shape() == b->val.shape(), "add: shape mismatch");
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->val[i];
  return detail::make_result(std::move(out), {a, b}, [](Node& n) {
    for (int pi = 0; pi < 2; ++pi) {
      auto& p = n.parents[pi];
      if (!p->requires_grad) continue;
      Tensor& g = p->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  check(a->val.shape() == b->val.shape(), "sub: shape mismatch");
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->val[i];
  return detail::make_result(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  check(a->val.shape() == b->val.shape(), "mul: shape mismatch");
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->val[i];
  return detail::make_result(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i)
        g[i] += n.grad[i] * n.parents[1]->val[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i)
        g[i] += n.grad[i] * n.parents[0]->val[i];
    }
  });
}

inline Var mul_scalar(const Var& a, double s) {
  Tensor out = a->val;
  for (auto& v : out.vec()) v *= s;
  return detail::make_result(std::move(out), {a}, [s](Node& n) {
    Tensor& g = n.parents[0]->grad_ref();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += s * n.grad[i];
  });
}

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a->val;
  for (auto& v : out.vec()) v += s;
  return detail::make_result(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.parents[0]->grad_ref();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

inline Var neg(const Var& a) { return mul_scalar(a, -1.0); }

inline Var relu(const Var& a) {
  Tensor out = a->val;
  for (auto& v : out.vec()) v = std::max(0.0, v);
  return detail::make_result(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.parents[0]->grad_ref();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (n.parents[0]->val[i] > 0.0) g[i] += n.grad[i];
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out = a->val;
  for (auto& v : out.vec()) v = 1.0 / (1.0 + std::exp(-v));
  return detail::make_result(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.parents[0]->grad_ref();
    for (int64_t i = 0; i < g.numel(); ++i) {
      double s = n.val[i];
      g[i] += n.grad[i] * s * (1.0 - s);
    }
  });
}

inline Var tanh_op(const Var& a) {
  Tensor out = a->val;
  for (auto& v : out.vec()) v = std::tanh(v);
  return detail::make_result(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.parents[0]->grad_ref();
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] += n.grad[i] * (1.0 - n.val[i] * n.val[i]);
  });
}

inline Var exp_op(const Var& a) {
  Tensor out = a->val;
  for (auto& v : out.vec()) v = std::exp(v);
  return detail::make_result(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.parents[0]->grad_ref();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * n.val[i];
  });
}

inline Var log_op(const Var& a) {
  Tensor out = a->val;
  for (auto& v : out.vec()) v = std::log(v);
  return detail::make_result(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.parents[0]->grad_ref();
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] += n.grad[i] / n.parents[0]->val[i];
  });
}

inline Var softplus(const Var& a) {
  Tensor out = a->val;
  for (auto& v : out.vec())
    v = v > 30.0 ? v : std::log1p(std::exp(v));
  return detail::make_result(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.parents[0]->grad_ref();
    for (int64_t i = 0; i < g.numel(); ++i) {
      double x = n.parents[0]->val[i];
      g[i] += n.grad[i] / (1.0 + std::exp(-x));
    }
  });
}

// Clamp; gradient passes only inside the closed interval.
inline Var clampv(const Var& a, double lo, double hi) {
  Tensor out = a->val;
  for (auto& v : out.vec()) v = std::min(hi, std::max(lo, v));
  return detail::make_result(std::move(out), {a}, [lo, hi](Node& n) {
    Tensor& g = n.parents[0]->grad_ref();
    for (int64_t i = 0; i < g.numel(); ++i) {
      double x = n.parents[0]->val[i];
      if (x >= lo && x <= hi) g[i] += n.grad[i];
    }
  });
}

inline Var clamp_min(const Var& a, double lo) {
  return clampv(a, lo, std::numeric_limits<double>::infinity());
}

// a^p for a > 0, p constant.
inline Var pow_scalar(const Var& a, double p) {
  Tensor out = a->val;
  for (auto& v : out.vec()) v = std::pow(v, p);
  return detail::make_result(std::move(out), {a}, [p](Node& n) {
    Tensor& g = n.parents[0]->grad_ref();
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] += n.grad[i] * p * std::pow(n.parents[0]->val[i], p - 1.0);
  });
}

inline Var div(const Var& a, const Var& b) {
  check(a->val.shape() == b->val.shape(), "div: shape mismatch");
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] /= b->val[i];
  return detail::make_result(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i)
        g[i] += n.grad[i] / n.parents[1]->val[i];
    }
    if (n.parents[1]->requires_grad) {
      Tensor& g = n.parents[1]->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i) {
        double bv = n.parents[1]->val[i];
        g[i] -= n.grad[i] * n.parents[0]->val[i] / (bv * bv);
      }
    }
  });
}

// Adds a 1-element Var broadcast over all elements of x.
inline Var add_bcast_scalar(const Var& x, const Var& s) {
  check(s->val.numel() == 1, "add_bcast_scalar: s must be scalar");
  Tensor out = x->val;
  double sv = s->val[0];
  for (auto& v : out.vec()) v += sv;
  return detail::make_result(std::move(out), {x, s}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      Tensor& g = n.parents[0]->grad_ref();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      double acc = 0.0;
      for (int64_t i = 0; i < n.grad.numel(); ++i) acc += n.grad[i];
      n.parents[1]->grad_ref()[0] += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// Shape ops

inline Var reshape(const Var& a, Shape s) {
  Tensor out = a->val.reshaped(s);
  return detail::make_result(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.parents[0]->grad_ref();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

inline Var concat_c(const std::vector<Var>& xs) {
  check(!xs.empty(), "concat_c: empty input");
  Shape s0 = xs[0]->val.shape();
  int ctot = 0;
  for (const auto& x : xs) {
    const Shape& s = x->val.shape();
    check(s.n == s0.n && s.h == s0.h && s.w == s0.w,
          "concat_c: spatial/batch mismatch");
    ctot += s.c;
  }
  Tensor out(Shape(s0.n, ctot, s0.h, s0.w));
  const int64_t plane = int64_t(s0.h) * s0.w;
  for (int n = 0; n < s0.n; ++n) {
    int co = 0;
    for (const auto& x : xs) {
      const Shape& s = x->val.shape();
      std::memcpy(out.data() + (int64_t(n) * ctot + co) * plane,
                  x->val.data() + int64_t(n) * s.c * plane,
                  sizeof(double) * s.c * plane);
      co += s.c;
    }
  }
  return detail::make_result(std::move(out), xs, [](Node& n) {
    const Shape& so = n.val.shape();
    const int64_t plane = int64_t(so.h) * so.w;
    for (int b = 0; b < so.n; ++b) {
      int co = 0;
      for (auto& p : n.parents) {
        const Shape& s = p->val.shape();
        if (p->requires_grad) {
          Tensor& g = p->grad_ref();
          const double* src = n.grad.data() + (int64_t(b) * so.c + co) * plane;
          double* dst = g.data() + int64_t(b) * s.c * plane;
          for (int64_t i = 0; i < int64_t(s.c) * plane; ++i) dst[i] += src[i];
        }
        co += s.c;
      }
    }
  });
}

inline Var slice_c(const Var& a, int c0, int len) {
  const Shape& s = a->val.shape();
  check(c0 >= 0 && c0 + len <= s.c, "slice_c: range out of bounds");
  Tensor out(Shape(s.n, len, s.h, s.w));
  const int64_t plane = int64_t(s.h) * s.w;
  for (int n = 0; n < s.n; ++n)
    std::memcpy(out.data() + int64_t(n) * len * plane,
                a->val.data() + (int64_t(n) * s.c + c0) * plane,
                sizeof(double) * len * plane);
  return detail::make_result(std::move(out), {a}, [c0, len](Node& n) {
    const Shape& s = n.parents[0]->val.shape();
    Tensor& g = n.parents[0]->grad_ref();
    const int64_t plane = int64_t(s.h) * s.w;
    for (int b = 0; b < s.n; ++b) {
      const double* src = n.grad.data() + int64_t(b) * len * plane;
      double* dst = g.data() + (int64_t(b) * s.c + c0) * plane;
      for (int64_t i = 0; i < int64_t(len) * plane; ++i) dst[i] += src[i];
    }
  });
}

// Replicate-pad at bottom/right to (out_h, out_w).
inline Var pad_edge_hw(const Var& a, int out_h, int out_w) {
  const Shape& s = a->val.shape();
  check(out_h >= s.h && out_w >= s.w, "pad_edge_hw: target smaller than input");
  if (out_h == s.h && out_w == s.w) return a;
  Tensor out(Shape(s.n, s.c, out_h, out_w));
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
          out.at(n, c, y, x) =
              a->val.at(n, c, std::min(y, s.h - 1), std::min(x, s.w - 1));
  return detail::make_result(std::move(out), {a}, [](Node& n) {
    const Shape& s = n.parents[0]->val.shape();
    const Shape& so = n.val.shape();
    Tensor& g = n.parents[0]->grad_ref();
    for (int b = 0; b < s.n; ++b)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < so.h; ++y)
          for (int x = 0; x < so.w; ++x)
            g.at(b, c, std::min(y, s.h - 1), std::min(x, s.w - 1)) +=
                n.grad.at(b, c, y, x);
  });
}

// Crop to the top-left (h, w) region.
inline Var crop_hw(const Var& a, int h, int w) {
  const Shape& s = a->val.shape();
  check(h <= s.h && w <= s.w, "crop_hw: target larger than input");
  if (h == s.h && w == s.w) return a;
  Tensor out(Shape(s.n, s.c, h, w));
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(n, c, y, x) = a->val.at(n, c, y, x);
  return detail::make_result(std::move(out), {a}, [](Node& n) {
    const Shape& so = n.val.shape();
    Tensor& g = n.parents[0]->grad_ref();
    for (int b = 0; b < so.n; ++b)
      for (int c = 0; c < so.c; ++c)
        for (int y = 0; y < so.h; ++y)
          for (int x = 0; x < so.w; ++x)
            g.at(b, c, y, x) += n.grad.at(b, c, y, x);
  });
}

inline Var avgpool2(const Var& a) {
  const Shape& s = a->val.shape();
  check(s.h % 2 == 0 && s.w % 2 == 0, "avgpool2: dims must be even");
  Tensor out(Shape(s.n, s.c, s.h / 2, s.w / 2));
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h / 2; ++y)
        for (int x = 0; x < s.w / 2; ++x)
          out.at(n, c, y, x) =
              0.25 * (a->val.at(n, c, 2 * y, 2 * x) +
                      a->val.at(n, c, 2 * y, 2 * x + 1) +
                      a->val.at(n, c, 2 * y + 1, 2 * x) +
                      a->val.at(n, c, 2 * y + 1, 2 * x + 1));
  return detail::make_result(std::move(out), {a}, [](Node& n) {
    const Shape& so = n.val.shape();
    Tensor& g = n.parents[0]->grad_ref();
    for (int b = 0; b < so.n; ++b)
      for (int c = 0; c < so.c; ++c)
        for (int y = 0; y < so.h; ++y)
          for (int x = 0; x < so.w; ++x) {
            double gv = 0.25 * n.grad.at(b, c, y, x);
            g.at(b, c, 2 * y, 2 * x) += gv;
            g.at(b, c, 2 * y, 2 * x + 1) += gv;
            g.at(b, c, 2 * y + 1, 2 * x) += gv;
            g.at(b, c, 2 * y + 1, 2 * x + 1) += gv;
          }
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
  Tensor out(Shape(1, 1, 1, 1));
  out[0] = a->val.sum();
  return detail::make_result(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.parents[0]->grad_ref();
    double gv = n.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gv;
  });
}

inline Var mean(const Var& a) {
  return mul_scalar(sum(a), 1.0 / double(a->val.numel()));
}

inline Var mse(const Var& a, const Var& b) {
  Var d = sub(a, b);
  return mean(mul(d, d));
}

// ---------------------------------------------------------------------------
// Convolutions (im2col + BLAS dgemm)

namespace detail {

// col[(C*k*k) x (oh*ow)]: col[(c,ky,kx),(oy,ox)] = src[c, oy*s+ky-p, ox*s+kx-p]
inline void im2col(const double* src, int C, int H, int W, int k, int stride,
                   int pad, int oh, int ow, double* col) {
  const int64_t ocount = int64_t(oh) * ow;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* dst = col + ((int64_t(c) * k + ky) * k + kx) * ocount;
        for (int oy = 0; oy < oh; ++oy) {
          int sy = oy * stride + ky - pad;
          if (sy < 0 || sy >= H) {
            for (int ox = 0; ox < ow; ++ox) dst[int64_t(oy) * ow + ox] = 0.0;
            continue;
          }
          const double* srow = src + (int64_t(c) * H + sy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            int sx = ox * stride + kx - pad;
            dst[int64_t(oy) * ow + ox] = (sx < 0 || sx >= W) ? 0.0 : srow[sx];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add col back into dst.
inline void col2im_add(const double* col, int C, int H, int W, int k,
                       int stride, int pad, int oh, int ow, double* dst) {
  const int64_t ocount = int64_t(oh) * ow;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* srcp = col + ((int64_t(c) * k + ky) * k + kx) * ocount;
        for (int oy = 0; oy < oh; ++oy) {
          int sy = oy * stride + ky - pad;
          if (sy < 0 || sy >= H) continue;
          double* drow = dst + (int64_t(c) * H + sy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            int sx = ox * stride + kx - pad;
            if (sx >= 0 && sx < W) drow[sx] += srcp[int64_t(oy) * ow + ox];
          }
        }
      }
    }
  }
}

inline void dgemm_rm(bool ta, bool tb, int m, int n, int kk, double alpha,
                     const double* A, int lda, const double* B, int ldb,
                     double beta, double* C, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, kk, alpha, A, lda, B, ldb,
              beta, C, ldc);
}

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// x: (N, Ci, H, W); w: (Co, Ci, k, k); b: vec(Co) or empty.
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride,
                  int pad) {
  const Shape& xs = x->val.shape();
  const Shape& ws = w->val.shape();
  check(ws.c == xs.c, "conv2d: channel mismatch");
  check(ws.h == ws.w, "conv2d: kernel must be square");
  const int N = xs.n, Ci = xs.c, H = xs.h, W = xs.w;
  const int Co = ws.n, k = ws.h;
  const int oh = detail::conv_out_dim(H, k, stride, pad);
  const int ow = detail::conv_out_dim(W, k, stride, pad);
  check(oh > 0 && ow > 0, "conv2d: output would be empty");
  const int64_t ckk = int64_t(Ci) * k * k;
  const int64_t ocount = int64_t(oh) * ow;

  Tensor out(Shape(N, Co, oh, ow));
  std::vector<double> col(static_cast<size_t>(ckk * ocount));
  for (int n = 0; n < N; ++n) {
    detail::im2col(x->val.data() + int64_t(n) * Ci * H * W, Ci, H, W, k,
                   stride, pad, oh, ow, col.data());
    detail::dgemm_rm(false, false, Co, int(ocount), int(ckk), 1.0,
                     w->val.data(), int(ckk), col.data(), int(ocount), 0.0,
                     out.data() + int64_t(n) * Co * ocount, int(ocount));
  }
  if (b && b->val.numel() > 0) {
    check(b->val.numel() == Co, "conv2d: bias size mismatch");
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < Co; ++c) {
        double bv = b->val[c];
        double* p = out.data() + (int64_t(n) * Co + c) * ocount;
        for (int64_t i = 0; i < ocount; ++i) p[i] += bv;
      }
  }

  std::vector<Var> parents = {x, w};
  if (b) parents.push_back(b);
  return detail::make_result(
      std::move(out), std::move(parents), [stride, pad](Node& n) {
        const Var& x = n.parents[0];
        const Var& w = n.parents[1];
        const Shape& xs = x->val.shape();
        const Shape& ws = w->val.shape();
        const int N = xs.n, Ci = xs.c, H = xs.h, W = xs.w;
        const int Co = ws.n, k = ws.h;
        const int oh = n.val.shape().h, ow = n.val.shape().w;
        const int64_t ckk = int64_t(Ci) * k * k;
        const int64_t ocount = int64_t(oh) * ow;
        std::vector<double> col(static_cast<size_t>(ckk * ocount));
        std::vector<double> gcol;
        const bool need_x = x->requires_grad;
        const bool need_w = w->requires_grad;
        if (need_x) gcol.resize(static_cast<size_t>(ckk * ocount));
        for (int b2 = 0; b2 < N; ++b2) {
          const double* gy = n.grad.data() + int64_t(b2) * Co * ocount;
          if (need_w) {
            detail::im2col(x->val.data() + int64_t(b2) * Ci * H * W, Ci, H, W,
                           k, stride, pad, oh, ow, col.data());
            detail::dgemm_rm(false, true, Co, int(ckk), int(ocount), 1.0, gy,
                             int(ocount), col.data(), int(ocount), 1.0,
                             w->grad_ref().data(), int(ckk));
          }
          if (need_x) {
            detail::dgemm_rm(true, false, int(ckk), int(ocount), Co, 1.0,
                             w->val.data(), int(ckk), gy, int(ocount), 0.0,
                             gcol.data(), int(ocount));
            detail::col2im_add(gcol.data(), Ci, H, W, k, stride, pad, oh, ow,
                               x->grad_ref().data() + int64_t(b2) * Ci * H * W);
          }
        }
        if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
          Tensor& gb = n.parents[2]->grad_ref();
          for (int b2 = 0; b2 < N; ++b2)
            for (int c = 0; c < Co; ++c) {
              const double* p = n.grad.data() + (int64_t(b2) * Co + c) * ocount;
              double acc = 0.0;
              for (int64_t i = 0; i < ocount; ++i) acc += p[i];
              gb[c] += acc;
            }
        }
      });
}

// Transposed convolution. x: (N, Ci, H, W); w: (Ci, Co, k, k); output size
// is given explicitly (out_h = (H-1)*stride - 2*pad + k + output_padding).
inline Var deconv2d(const Var& x, const Var& w, const Var& b, int stride,
                    int pad, int out_h, int out_w) {
  const Shape& xs = x->val.shape();
  const Shape& ws = w->val.shape();
  check(ws.n == xs.c, "deconv2d: channel mismatch");
  const int N = xs.n, Ci = xs.c, H = xs.h, W = xs.w;
  const int Co = ws.c, k = ws.h;
  // Geometry check: the virtual forward conv from (out_h,out_w) must give (H,W).
  check(detail::conv_out_dim(out_h, k, stride, pad) == H &&
            detail::conv_out_dim(out_w, k, stride, pad) == W,
        "deconv2d: inconsistent output size");
  const int64_t ckk = int64_t(Co) * k * k;
  const int64_t icount = int64_t(H) * W;

  Tensor out(Shape(N, Co, out_h, out_w));
  std::vector<double> col(static_cast<size_t>(ckk * icount));
  for (int n = 0; n < N; ++n) {
    // col = W^T * x   with W viewed as (Ci) x (Co*k*k)
    detail::dgemm_rm(true, false, int(ckk), int(icount), Ci, 1.0,
                     w->val.data(), int(ckk),
                     x->val.data() + int64_t(n) * Ci * icount, int(icount),
                     0.0, col.data(), int(icount));
    detail::col2im_add(col.data(), Co, out_h, out_w, k, stride, pad, H, W,
                       out.data() + int64_t(n) * Co * out_h * out_w);
  }
  if (b && b->val.numel() > 0) {
    check(b->val.numel() == Co, "deconv2d: bias size mismatch");
    const int64_t oc = int64_t(out_h) * out_w;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < Co; ++c) {
        double bv = b->val[c];
        double* p = out.data() + (int64_t(n) * Co + c) * oc;
        for (int64_t i = 0; i < oc; ++i) p[i] += bv;
      }
  }

  std::vector<Var> parents = {x, w};
  if (b) parents.push_back(b);
  return detail::make_result(
      std::move(out), std::move(parents), [stride, pad](Node& n) {
        const Var& x = n.parents[0];
        const Var& w = n.parents[1];
        const Shape& xs = x->val.shape();
        const Shape& ws = w->val.shape();
        const int N = xs.n, Ci = xs.c, H = xs.h, W = xs.w;
        const int Co = ws.c, k = ws.h;
        const int oh = n.val.shape().h, ow = n.val.shape().w;
        const int64_t ckk = int64_t(Co) * k * k;
        const int64_t icount = int64_t(H) * W;
        const int64_t oc = int64_t(oh) * ow;
        std::vector<double> col(static_cast<size_t>(ckk * icount));
        for (int b2 = 0; b2 < N; ++b2) {
          const double* gy = n.grad.data() + int64_t(b2) * Co * oc;
          // col = im2col(grad_out): gathers grad_out at conv positions.
          detail::im2col(gy, Co, oh, ow, k, stride, pad, H, W, col.data());
          if (x->requires_grad) {
            detail::dgemm_rm(false, false, Ci, int(icount), int(ckk), 1.0,
                             w->val.data(), int(ckk), col.data(), int(icount),
                             1.0,
                             x->grad_ref().data() + int64_t(b2) * Ci * icount,
                             int(icount));
          }
          if (w->requires_grad) {
            detail::dgemm_rm(false, true, Ci, int(ckk), int(icount), 1.0,
                             x->val.data() + int64_t(b2) * Ci * icount,
                             int(icount), col.data(), int(icount), 1.0,
                             w->grad_ref().data(), int(ckk));
          }
        }
        if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
          Tensor& gb = n.parents[2]->grad_ref();
          for (int b2 = 0; b2 < N; ++b2)
            for (int c = 0; c < Co; ++c) {
              const double* p = n.grad.data() + (int64_t(b2) * Co + c) * oc;
              double acc = 0.0;
              for (int64_t i = 0; i < oc; ++i) acc += p[i];
              gb[c] += acc;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Channelwise linear algebra for the factorized entropy model.
// x: (N, C, di, M); w: (1, C, do, di); b: (1, C, do, 1) -> (N, C, do, M)

inline Var channelwise_linear(const Var& x, const Var& w, const Var& b) {
  const Shape& xs = x->val.shape();
  const Shape& ws = w->val.shape();
  check(ws.c == xs.c && ws.w == xs.h, "channelwise_linear: shape mismatch");
  const int N = xs.n, C = xs.c, di = xs.h, M = xs.w, dout = ws.h;
  check(b->val.shape().c == C && b->val.shape().h == dout,
        "channelwise_linear: bias mismatch");
  Tensor out(Shape(N, C, dout, M));
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int o = 0; o < dout; ++o) {
        double bv = b->val.at(0, c, o, 0);
        double* dst = &out.at(n, c, o, 0);
        for (int m = 0; m < M; ++m) dst[m] = bv;
        for (int i = 0; i < di; ++i) {
          double wv = w->val.at(0, c, o, i);
          const double* src = &x->val.at(n, c, i, 0);
          for (int m = 0; m < M; ++m) dst[m] += wv * src[m];
        }
      }
  return detail::make_result(std::move(out), {x, w, b}, [](Node& n2) {
    const Var& x = n2.parents[0];
    const Var& w = n2.parents[1];
    const Var& b = n2.parents[2];
    const int N = x->val.shape().n, C = x->val.shape().c,
              di = x->val.shape().h, M = x->val.shape().w,
              dout = w->val.shape().h;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int o = 0; o < dout; ++o) {
          const double* g = &n2.grad.at(n, c, o, 0);
          if (b->requires_grad) {
            double acc = 0.0;
            for (int m = 0; m < M; ++m) acc += g[m];
            b->grad_ref().at(0, c, o, 0) += acc;
          }
          for (int i = 0; i < di; ++i) {
            if (w->requires_grad) {
              const double* xv = &x->val.at(n, c, i, 0);
              double acc = 0.0;
              for (int m = 0; m < M; ++m) acc += g[m] * xv[m];
              w->grad_ref().at(0, c, o, i) += acc;
            }
            if (x->requires_grad) {
              double wv = w->val.at(0, c, o, i);
              double* gx = &x->grad_ref().at(n, c, i, 0);
              for (int m = 0; m < M; ++m) gx[m] += wv * g[m];
            }
          }
        }
  });
}

// x: (N, C, d, M) * s: (1, C, d, 1) broadcast over batch and last dim.
inline Var mul_bcast_lastdim(const Var& x, const Var& s) {
  const Shape& xs = x->val.shape();
  const Shape& ss = s->val.shape();
  check(ss.c == xs.c && ss.h == xs.h && ss.w == 1,
        "mul_bcast_lastdim: shape mismatch");
  Tensor out = x->val;
  const int N = xs.n, C = xs.c, d = xs.h, M = xs.w;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < d; ++i) {
        double sv = s->val.at(0, c, i, 0);
        double* p = &out.at(n, c, i, 0);
        for (int m = 0; m < M; ++m) p[m] *= sv;
      }
  return detail::make_result(std::move(out), {x, s}, [](Node& n2) {
    const Var& x = n2.parents[0];
    const Var& s = n2.parents[1];
    const int N = x->val.shape().n, C = x->val.shape().c, d = x->val.shape().h,
              M = x->val.shape().w;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < d; ++i) {
          const double* g = &n2.grad.at(n, c, i, 0);
          if (x->requires_grad) {
            double sv = s->val.at(0, c, i, 0);
            double* gx = &x->grad_ref().at(n, c, i, 0);
            for (int m = 0; m < M; ++m) gx[m] += sv * g[m];
          }
          if (s->requires_grad) {
            const double* xv = &x->val.at(n, c, i, 0);
            double acc = 0.0;
            for (int m = 0; m < M; ++m) acc += g[m] * xv[m];
            s->grad_ref().at(0, c, i, 0) += acc;
          }
        }
  });
}

// ---------------------------------------------------------------------------
// Backward pass

inline void backward(const Var& root) {
  check(root->val.numel() == 1, "backward: root must be scalar");
  if (!root->requires_grad) return;
  // Iterative post-order topological sort.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_ref()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.numel() > 0) n->backprop(*n);
  }
}

// Central finite-difference gradient of scalar_fn w.r.t. leaf, for tests.
template <typename F>
Tensor finite_diff_grad(const Var& leaf, F scalar_fn, double h = 1e-3) {
  Tensor g(leaf->val.shape());
  for (int64_t i = 0; i < leaf->val.numel(); ++i) {
    double orig = leaf->val[i];
    leaf->val[i] = orig + h;
    double fp = scalar_fn();
    leaf->val[i] = orig - h;
    double fm = scalar_fn();
    leaf->val[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace ad
}  // namespace hrvc
