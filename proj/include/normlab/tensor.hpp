#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace normlab {

// Dense rank-4 array in (n, c, h, w) layout, row-major with w fastest.
// 64-bit values throughout: the gradient checks that gate this project need
// the headroom.
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, double fill = 0.0)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<size_t>(n_) * c_ * h_ * w_, fill) {}

  size_t size() const { return data.size(); }
  size_t index(int in, int ic, int ih, int iw) const {
    return ((static_cast<size_t>(in) * c + ic) * h + ih) * w + iw;
  }
  double& at(int in, int ic, int ih, int iw) { return data[index(in, ic, ih, iw)]; }
  double at(int in, int ic, int ih, int iw) const { return data[index(in, ic, ih, iw)]; }

  bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  std::string shape_str() const;

  // Contiguous slice of samples [n0, n0+count), shared layout.
  Tensor4 slice_n(int n0, int count) const;

  bool all_finite() const;
};

// Convolution filter bank, (out_channels, in_channels, kh, kw) row-major.
struct FilterBank {
  int oc = 0, ic = 0, kh = 0, kw = 0;
  std::vector<double> data;

  FilterBank() = default;
  FilterBank(int oc_, int ic_, int kh_, int kw_, double fill = 0.0)
      : oc(oc_), ic(ic_), kh(kh_), kw(kw_), data(static_cast<size_t>(oc_) * ic_ * kh_ * kw_, fill) {}

  size_t size() const { return data.size(); }
  size_t index(int o, int i, int y, int x) const {
    return ((static_cast<size_t>(o) * ic + i) * kh + y) * kw + x;
  }
  double& at(int o, int i, int y, int x) { return data[index(o, i, y, x)]; }
  double at(int o, int i, int y, int x) const { return data[index(o, i, y, x)]; }
  std::string shape_str() const;
};

// A value with a gradient buffer of the same shape.
struct GradPair {
  Tensor4 value;
  Tensor4 grad;

  explicit GradPair(Tensor4 v) : value(std::move(v)) {
    grad = Tensor4(value.n, value.c, value.h, value.w);
  }
};

}  // namespace normlab
