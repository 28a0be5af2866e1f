#pragma once

#include <utility>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

struct ConvGeom {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

// Output spatial extent of a convolution along one axis.
int conv_out_extent(int in, int kernel, int stride, int pad, int dilation);

// Cross-correlation (no kernel flip), the deep-learning convention.
Tensor4 conv2d(const Tensor4& x, const FilterBank& w, const ConvGeom& g);

struct ConvGrads {
  Tensor4 dx;
  FilterBank dw;
};

// Exact gradients of sum(dy * conv2d(x, w)) with respect to x and w.
ConvGrads conv2d_grad(const Tensor4& x, const FilterBank& w, const Tensor4& dy, const ConvGeom& g);

Tensor4 relu(const Tensor4& x);
// Subgradient at 0 is 0.
Tensor4 relu_grad(const Tensor4& x, const Tensor4& dy);

// Mean over (h, w) per sample and channel; output shape (n, c, 1, 1).
Tensor4 global_avg_pool(const Tensor4& x);
Tensor4 global_avg_pool_grad(const Tensor4& x, const Tensor4& dy);

// Fully connected head on a flat (n, f, 1, 1) tensor. Weights are a
// (classes, f, 1, 1) bank; bias has one entry per class.
Tensor4 linear(const Tensor4& x, const FilterBank& weight, const std::vector<double>& bias);

struct LinearGrads {
  Tensor4 dx;
  FilterBank dweight;
  std::vector<double> dbias;
};
LinearGrads linear_grad(const Tensor4& x, const FilterBank& weight, const Tensor4& dy);

// Per-sample cross entropy: loss = -log softmax(logits)[label],
// dlogits = softmax(logits) - onehot(label).
struct XentResult {
  double loss = 0.0;
  std::vector<double> dlogits;
};
XentResult softmax_cross_entropy(const std::vector<double>& logits, int label);

}  // namespace normlab
