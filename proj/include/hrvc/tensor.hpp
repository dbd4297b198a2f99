#pragma once

#include <array>
#include <cstring>
#include <numeric>
#include <vector>

#include "hrvc/common.hpp"

namespace hrvc {

// Dense row-major tensor of doubles, rank <= 4 with (n, c, h, w) semantics.
// Lower-rank data sets the leading dims to 1.
struct Shape {
  int n = 1, c = 1, h = 1, w = 1;

  Shape() = default;
  Shape(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {}
  static Shape chw(int c_, int h_, int w_) { return Shape(1, c_, h_, w_); }
  static Shape hw(int h_, int w_) { return Shape(1, 1, h_, w_); }
  static Shape vec(int len) { return Shape(1, 1, 1, len); }

  int64_t numel() const {
    return int64_t(n) * c * h * w;
  }
  bool operator==(const Shape& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0)
      : shape_(s), data_(static_cast<size_t>(s.numel()), fill) {}

  static Tensor zeros(Shape s) { return Tensor(s, 0.0); }
  static Tensor full(Shape s, double v) { return Tensor(s, v); }

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return shape_.numel(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // (n, c, y, x) accessor.
  double& at(int n, int c, int y, int x) {
    return data_[idx(n, c, y, x)];
  }
  double at(int n, int c, int y, int x) const {
    return data_[idx(n, c, y, x)];
  }

  size_t idx(int n, int c, int y, int x) const {
    return static_cast<size_t>(
        ((int64_t(n) * shape_.c + c) * shape_.h + y) * shape_.w + x);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    check(s.numel() == shape_.numel(),
          "reshape: element count mismatch " + shape_.str() + " -> " + s.str());
    Tensor out = *this;
    out.shape_ = s;
    return out;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double min() const {
    double m = data_.empty() ? 0.0 : data_[0];
    for (double v : data_) m = std::min(m, v);
    return m;
  }
  double max() const {
    double m = data_.empty() ? 0.0 : data_[0];
    for (double v : data_) m = std::max(m, v);
    return m;
  }
  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }
  double mean() const { return data_.empty() ? 0.0 : sum() / double(data_.size()); }

  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

private:
  Shape shape_{0, 0, 0, 0};
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace hrvc
