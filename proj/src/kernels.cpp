#include "normlab/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "normlab/errors.hpp"

namespace normlab {

int conv_out_extent(int in, int kernel, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1;
}

static void check_conv_shapes(const Tensor4& x, const FilterBank& w, const ConvGeom& g) {
  if (w.ic != x.c) {
    throw ConfigError("conv2d: filter in_channels " + w.shape_str() + " does not match input " +
                      x.shape_str());
  }
  if (g.stride < 1 || g.dilation < 1 || g.pad < 0) {
    throw ConfigError("conv2d: invalid geometry (stride " + std::to_string(g.stride) + ", pad " +
                      std::to_string(g.pad) + ", dilation " + std::to_string(g.dilation) + ")");
  }
  if (conv_out_extent(x.h, w.kh, g.stride, g.pad, g.dilation) < 1 ||
      conv_out_extent(x.w, w.kw, g.stride, g.pad, g.dilation) < 1) {
    throw ConfigError("conv2d: empty output for input " + x.shape_str() + " and filter " +
                      w.shape_str());
  }
}

Tensor4 conv2d(const Tensor4& x, const FilterBank& w, const ConvGeom& g) {
  check_conv_shapes(x, w, g);
  const int oh = conv_out_extent(x.h, w.kh, g.stride, g.pad, g.dilation);
  const int ow = conv_out_extent(x.w, w.kw, g.stride, g.pad, g.dilation);
  Tensor4 y(x.n, w.oc, oh, ow);

  // Accumulate filter taps into contiguous output rows; the inner ox loop
  // vectorizes and the summation order is fixed.
  for (int in = 0; in < x.n; ++in) {
    for (int oc = 0; oc < w.oc; ++oc) {
      for (int ic = 0; ic < x.c; ++ic) {
        const double* xp = &x.data[x.index(in, ic, 0, 0)];
        const double* wp = &w.data[w.index(oc, ic, 0, 0)];
        for (int oy = 0; oy < oh; ++oy) {
          double* yrow = &y.data[y.index(in, oc, oy, 0)];
          for (int ky = 0; ky < w.kh; ++ky) {
            const int iy = oy * g.stride - g.pad + ky * g.dilation;
            if (iy < 0 || iy >= x.h) continue;
            const double* xrow = xp + static_cast<size_t>(iy) * x.w;
            for (int kx = 0; kx < w.kw; ++kx) {
              const double wv = wp[ky * w.kw + kx];
              const int base = -g.pad + kx * g.dilation;
              if (g.stride == 1) {
                const int ox_lo = std::max(0, -base);
                const int ox_hi = std::min(ow, x.w - base);
                for (int ox = ox_lo; ox < ox_hi; ++ox) {
                  yrow[ox] += wv * xrow[ox + base];
                }
              } else {
                for (int ox = 0; ox < ow; ++ox) {
                  const int ix = ox * g.stride + base;
                  if (ix < 0 || ix >= x.w) continue;
                  yrow[ox] += wv * xrow[ix];
                }
              }
            }
          }
        }
      }
    }
  }
  return y;
}

ConvGrads conv2d_grad(const Tensor4& x, const FilterBank& w, const Tensor4& dy, const ConvGeom& g) {
  check_conv_shapes(x, w, g);
  const int oh = conv_out_extent(x.h, w.kh, g.stride, g.pad, g.dilation);
  const int ow = conv_out_extent(x.w, w.kw, g.stride, g.pad, g.dilation);
  if (dy.n != x.n || dy.c != w.oc || dy.h != oh || dy.w != ow) {
    throw ConfigError("conv2d_grad: cotangent shape " + dy.shape_str() + " does not match output (" +
                      std::to_string(x.n) + "," + std::to_string(w.oc) + "," + std::to_string(oh) +
                      "," + std::to_string(ow) + ")");
  }

  ConvGrads out{Tensor4(x.n, x.c, x.h, x.w), FilterBank(w.oc, w.ic, w.kh, w.kw)};
  for (int in = 0; in < x.n; ++in) {
    for (int oc = 0; oc < w.oc; ++oc) {
      for (int ic = 0; ic < x.c; ++ic) {
        const double* xp = &x.data[x.index(in, ic, 0, 0)];
        const double* wp = &w.data[w.index(oc, ic, 0, 0)];
        double* dxp = &out.dx.data[out.dx.index(in, ic, 0, 0)];
        double* dwp = &out.dw.data[out.dw.index(oc, ic, 0, 0)];
        for (int oy = 0; oy < oh; ++oy) {
          const double* dyrow = &dy.data[dy.index(in, oc, oy, 0)];
          for (int ky = 0; ky < w.kh; ++ky) {
            const int iy = oy * g.stride - g.pad + ky * g.dilation;
            if (iy < 0 || iy >= x.h) continue;
            const double* xrow = xp + static_cast<size_t>(iy) * x.w;
            double* dxrow = dxp + static_cast<size_t>(iy) * x.w;
            for (int kx = 0; kx < w.kw; ++kx) {
              const double wv = wp[ky * w.kw + kx];
              double dw_acc = 0.0;
              const int base = -g.pad + kx * g.dilation;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * g.stride + base;
                if (ix < 0 || ix >= x.w) continue;
                const double dv = dyrow[ox];
                dxrow[ix] += wv * dv;
                dw_acc += xrow[ix] * dv;
              }
              dwp[ky * w.kw + kx] += dw_acc;
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor4 relu(const Tensor4& x) {
  Tensor4 y = x;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor4 relu_grad(const Tensor4& x, const Tensor4& dy) {
  if (!x.same_shape(dy)) {
    throw ConfigError("relu_grad: shape mismatch " + x.shape_str() + " vs " + dy.shape_str());
  }
  Tensor4 dx(x.n, x.c, x.h, x.w);
  for (size_t i = 0; i < x.data.size(); ++i) {
    dx.data[i] = x.data[i] > 0.0 ? dy.data[i] : 0.0;
  }
  return dx;
}

Tensor4 global_avg_pool(const Tensor4& x) {
  Tensor4 y(x.n, x.c, 1, 1);
  const size_t hw = static_cast<size_t>(x.h) * x.w;
  for (int in = 0; in < x.n; ++in) {
    for (int ic = 0; ic < x.c; ++ic) {
      const double* p = &x.data[x.index(in, ic, 0, 0)];
      double acc = 0.0;
      for (size_t i = 0; i < hw; ++i) acc += p[i];
      y.at(in, ic, 0, 0) = acc / static_cast<double>(hw);
    }
  }
  return y;
}

Tensor4 global_avg_pool_grad(const Tensor4& x, const Tensor4& dy) {
  if (dy.n != x.n || dy.c != x.c || dy.h != 1 || dy.w != 1) {
    throw ConfigError("global_avg_pool_grad: cotangent shape " + dy.shape_str() +
                      " does not match pooled " + x.shape_str());
  }
  Tensor4 dx(x.n, x.c, x.h, x.w);
  const size_t hw = static_cast<size_t>(x.h) * x.w;
  const double inv = 1.0 / static_cast<double>(hw);
  for (int in = 0; in < x.n; ++in) {
    for (int ic = 0; ic < x.c; ++ic) {
      double* p = &dx.data[dx.index(in, ic, 0, 0)];
      const double v = dy.at(in, ic, 0, 0) * inv;
      for (size_t i = 0; i < hw; ++i) p[i] = v;
    }
  }
  return dx;
}

Tensor4 linear(const Tensor4& x, const FilterBank& weight, const std::vector<double>& bias) {
  if (x.h != 1 || x.w != 1) {
    throw ConfigError("linear: expected flat input (n,f,1,1), got " + x.shape_str());
  }
  if (weight.ic != x.c || weight.kh != 1 || weight.kw != 1) {
    throw ConfigError("linear: weight " + weight.shape_str() + " does not match input " +
                      x.shape_str());
  }
  if (static_cast<int>(bias.size()) != weight.oc) {
    throw ConfigError("linear: bias length " + std::to_string(bias.size()) + " != out features " +
                      std::to_string(weight.oc));
  }
  Tensor4 y(x.n, weight.oc, 1, 1);
  for (int in = 0; in < x.n; ++in) {
    const double* xv = &x.data[x.index(in, 0, 0, 0)];
    for (int o = 0; o < weight.oc; ++o) {
      const double* wv = &weight.data[weight.index(o, 0, 0, 0)];
      double acc = bias[o];
      for (int f = 0; f < x.c; ++f) acc += wv[f] * xv[f];
      y.at(in, o, 0, 0) = acc;
    }
  }
  return y;
}

LinearGrads linear_grad(const Tensor4& x, const FilterBank& weight, const Tensor4& dy) {
  if (dy.n != x.n || dy.c != weight.oc || dy.h != 1 || dy.w != 1) {
    throw ConfigError("linear_grad: cotangent shape " + dy.shape_str() + " does not match output");
  }
  LinearGrads out{Tensor4(x.n, x.c, 1, 1), FilterBank(weight.oc, weight.ic, 1, 1),
                  std::vector<double>(static_cast<size_t>(weight.oc), 0.0)};
  for (int in = 0; in < x.n; ++in) {
    const double* xv = &x.data[x.index(in, 0, 0, 0)];
    double* dxv = &out.dx.data[out.dx.index(in, 0, 0, 0)];
    for (int o = 0; o < weight.oc; ++o) {
      const double dv = dy.at(in, o, 0, 0);
      const double* wv = &weight.data[weight.index(o, 0, 0, 0)];
      double* dwv = &out.dweight.data[out.dweight.index(o, 0, 0, 0)];
      out.dbias[o] += dv;
      for (int f = 0; f < x.c; ++f) {
        dxv[f] += wv[f] * dv;
        dwv[f] += xv[f] * dv;
      }
    }
  }
  return out;
}

XentResult softmax_cross_entropy(const std::vector<double>& logits, int label) {
  if (label < 0 || static_cast<size_t>(label) >= logits.size()) {
    throw InputError("softmax_cross_entropy: label " + std::to_string(label) +
                     " out of range for " + std::to_string(logits.size()) + " classes");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  XentResult r;
  r.dlogits.resize(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    r.dlogits[i] = std::exp(logits[i] - m) / z;
  }
  r.loss = -(logits[static_cast<size_t>(label)] - m - std::log(z));
  r.dlogits[static_cast<size_t>(label)] -= 1.0;
  return r;
}

}  // namespace normlab
